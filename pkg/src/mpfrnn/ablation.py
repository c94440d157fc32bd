"""Desk-scale ablations on the synthetic context task.

Compares a one-step baseline, the multi-path feedback model with multi-step
fusion, and the same model trained on the last step only, across seeds.
``python -m mpfrnn.ablation ARCH`` prints the table.
"""

import argparse
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .archspec import parse_spec, validate_spec
from .data import SyntheticTaskConfig, generate_dataset
from .metrics import class_accuracy, mean_iou, pixel_accuracy
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

TRAIN_DATA_SEED = 1
TEST_DATA_SEED = 2
# 8 classes (2 cues x 4 textures) with mild pixel noise
DESK_TASK = SyntheticTaskConfig(noise=0.05)
DESK_TRAIN = TrainConfig(learning_rate=1e-4, epochs=15, batch_size=16)


@dataclass
class RunResult:
    variant: str
    seed: int
    PA: float
    CA: float
    mIoU: float
    seconds: float


def standard_variants(spec):
    """``{name: spec}`` for baseline, full model and last-step-only fusion."""
    T = spec.steps
    return {
        "baseline": spec.with_recurrence((), 1, (1.0,)),
        "mpf_msf": spec,
        "mpf_last": spec.with_recurrence(fusion_weights=(0.0,) * (T - 1) + (1.0,)),
    }


def recurrent_set_variants(spec, candidate_sets):
    """Same architecture with different recurrent layer sets."""
    return {"S=" + "{" + ",".join(map(str, s)) + "}": spec.with_recurrence(tuple(s))
            for s in candidate_sets}


def run_ablation(variants, config, seeds, n_train=512, n_test=128, task=None):
    task = task or DESK_TASK
    train_set = generate_dataset(task, n_train, TRAIN_DATA_SEED)
    test_set = generate_dataset(task, n_test, TEST_DATA_SEED)
    results = []
    for name, spec in variants.items():
        validate_spec(spec)
        for seed in seeds:
            t0 = time.perf_counter()
            res = train(spec, train_set, replace(config, seed=seed), val=test_set)
            cm = evaluate(res.model, test_set)
            results.append(RunResult(name, seed, pixel_accuracy(cm), class_accuracy(cm),
                                     mean_iou(cm), time.perf_counter() - t0))
            log.info("%s seed %d: PA %.4f CA %.4f", name, seed, results[-1].PA, results[-1].CA)
    return results


def summarize(results):
    """``{variant: (mean PA, mean CA, mean mIoU)}`` over seeds."""
    out = {}
    for name in dict.fromkeys(r.variant for r in results):
        rs = [r for r in results if r.variant == name]
        out[name] = tuple(float(np.mean([getattr(r, m) for r in rs])) for m in ("PA", "CA", "mIoU"))
    return out


def format_table(results):
    lines = [f"{'variant':<14} {'PA(%)':>7} {'CA(%)':>7} {'mIoU(%)':>8}"]
    for name, (pa, ca, miou) in summarize(results).items():
        lines.append(f"{name:<14} {100 * pa:7.1f} {100 * ca:7.1f} {100 * miou:8.1f}")
    return "\n".join(lines)


def main(argv=None):
    p = argparse.ArgumentParser(prog="python -m mpfrnn.ablation", description=__doc__)
    p.add_argument("arch", help="architecture file of the full model")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--train", type=int, default=512, help="training samples")
    p.add_argument("--test", type=int, default=128, help="test samples")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    with open(args.arch) as fh:
        spec = parse_spec(fh.read())
    cfg = replace(DESK_TRAIN, learning_rate=args.lr, epochs=args.epochs)
    seeds = [int(s) for s in args.seeds.split(",")]
    results = run_ablation(standard_variants(spec), cfg, seeds, args.train, args.test)
    print(format_table(results))


if __name__ == "__main__":
    main()
