"""Command-line interface: ``mpfrnn <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence.
"""

import argparse
import logging
import os
import sys

from . import __version__
from .analyzer import empirical_rf, export_graph, positive_init, rf_table, write_rf_csv
from .archspec import parse_spec, validate_spec
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticTaskConfig, generate_dataset, load_dataset, write_dataset
from .errors import DataError, DivergenceError, SpecError
from .loss import class_stats
from .metrics import format_report, write_report_csv
from .trainer import TrainConfig, evaluate, model_from_checkpoint, train
from .unroll import build_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _read_spec(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise UsageError(f"{path}: {e.strerror}") from None
    spec = parse_spec(text)
    for w in validate_spec(spec).warnings:
        logging.warning("%s: %s", path, w)
    return spec


def cmd_gen_data(args):
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = SyntheticTaskConfig.from_json(fh.read())
        except OSError as e:
            raise UsageError(f"{args.config}: {e.strerror}") from None
        except (TypeError, ValueError) as e:
            raise UsageError(f"{args.config}: {e}") from None
    else:
        cfg = SyntheticTaskConfig()
    ds = generate_dataset(cfg, args.count, args.seed)
    path = write_dataset(ds, args.out)
    with open(os.path.join(args.out, "task.json"), "w") as fh:
        fh.write(cfg.to_json() + "\n")
    print(f"wrote {len(ds)} samples ({cfg.num_classes} classes) to {path}")


def cmd_train(args):
    spec = _read_spec(args.arch)
    K = spec.num_classes
    data = load_dataset(args.data, K)
    val = load_dataset(args.val, K) if args.val else None
    try:
        cfg = TrainConfig(learning_rate=args.lr, momentum=args.momentum,
                          weight_decay=args.weight_decay, epochs=args.epochs,
                          batch_size=args.batch_size, seed=args.seed, hflip_prob=args.hflip,
                          crop_size=args.crop, precision=args.precision,
                          reweight=not args.no_reweight)
    except ValueError as e:
        raise UsageError(str(e)) from None
    resume = load_checkpoint(args.resume) if args.resume else None
    res = train(spec, data, cfg, val=val, resume=resume, log_path=args.log)
    save_checkpoint(res.checkpoint, args.out_checkpoint)
    for row in res.log:
        print(f"epoch {row['epoch']}: loss {row['loss']:.4f}  PA {row['PA']:.4f}  CA {row['CA']:.4f}")
    print(f"checkpoint written to {args.out_checkpoint}")


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    data = load_dataset(args.data, model.spec.num_classes)
    cm = evaluate(model, data, args.batch_size)
    text = format_report(cm)
    print(text)
    if args.report:
        stem, _ = os.path.splitext(args.report)
        write_report_csv(cm, args.report, stem + "_summary.csv")
        with open(stem + ".txt", "w") as fh:
            fh.write(text + "\n")


def cmd_analyze_rf(args):
    spec = _read_spec(args.arch)
    rows = rf_table(spec)
    if args.empirical:
        model = positive_init(build_model(spec, args.seed, "double"), args.seed)
        rows = [(ell, t, empirical_rf(model, ell, t, seed=args.seed)) for ell, t, _ in rows]
    write_rf_csv(rows, args.out)
    for ell, t, r in rows:
        print(f"layer {ell} step {t}: {r.height}x{r.width}")


def cmd_export_graph(args):
    spec = _read_spec(args.arch)
    model = build_model(spec, 0, "double")
    export_graph(model, args.out)
    print(f"{len(model.graph)} nodes written to {args.out}")


def cmd_class_stats(args):
    data = load_dataset(args.data, args.classes)
    stats = class_stats(data.label_maps(), args.classes, args.threshold)
    text = stats.report()
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")


def build_parser():
    p = _Parser(prog="mpfrnn", description="Multi-path feedback RNNs for scene parsing.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic context-task dataset")
    g.add_argument("--config", help="JSON task config (image_size, textures, cues, border, noise)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, required=True, help="number of samples")
    g.add_argument("--seed", type=int, default=0, help="generator seed")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model with SGD + momentum")
    t.add_argument("--arch", required=True, help="architecture file")
    t.add_argument("--data", required=True, help="training manifest")
    t.add_argument("--val", help="validation manifest (default: report on training data)")
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--lr", type=float, default=1e-3, help="learning rate")
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=5e-4)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--hflip", type=float, default=0.5, help="horizontal flip probability")
    t.add_argument("--crop", type=int, help="random square crop size (default: no crop)")
    t.add_argument("--precision", choices=["single", "double"], default="single")
    t.add_argument("--no-reweight", action="store_true", help="disable class re-weighting")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", help="checkpoint to continue training from")
    t.add_argument("--out-checkpoint", required=True, help="checkpoint file to write")
    t.add_argument("--log", help="per-epoch CSV log (epoch,loss,PA,CA)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (PA, CA, mIoU)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="manifest to evaluate on")
    e.add_argument("--report", help="per-class CSV; also writes <stem>_summary.csv and <stem>.txt")
    e.add_argument("--batch-size", type=int, default=16)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze-rf", help="receptive field of every layer and step")
    a.add_argument("--arch", required=True)
    a.add_argument("--out", required=True, help="CSV output (layer,step,rf_h,rf_w)")
    a.add_argument("--empirical", action="store_true",
                   help="measure gradient support of the centre unit on a positive-weight model")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analyze_rf)

    x = sub.add_parser("export-graph", help="write the unrolled graph in Graphviz DOT format")
    x.add_argument("--arch", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_graph)

    c = sub.add_parser("class-stats", help="class frequencies and loss weights of a dataset")
    c.add_argument("--data", required=True, help="manifest")
    c.add_argument("--classes", type=int, required=True, help="number of classes")
    c.add_argument("--threshold", type=float, default=0.85,
                   help="cumulative frequency defining the frequent classes")
    c.add_argument("--out", help="also write the report to this file")
    c.set_defaults(func=cmd_class_stats)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (UsageError, SpecError) as e:
        print(f"mpfrnn {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"mpfrnn {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"mpfrnn {args.command}: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
