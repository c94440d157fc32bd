"""SGD-with-momentum training of unrolled models."""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from .archspec import format_spec, parse_spec
from .data import Sample
from .errors import DivergenceError, ShapeError
from .loss import class_stats
from .metrics import ConfusionMatrix, class_accuracy, pixel_accuracy
from .tensor import argmax_channels, crop, hflip
from .unroll import add_loss, build_model

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "loss", "PA", "CA"]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 1
    batch_size: int = 8
    seed: int = 0
    hflip_prob: float = 0.5
    crop_size: int = None
    loss_divisor: float = None  # defaults to batch_size
    precision: str = "single"
    reweight: bool = True
    eta_threshold: float = 0.85

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def divisor(self):
        return float(self.loss_divisor if self.loss_divisor is not None else self.batch_size)


def data_rng(seed):
    """PCG64 stream for shuffling and augmentation, separate from initialization."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x0DA7A,)))


def sgd_momentum_step(params, buffers, config):
    """``v <- mu v + g + wd p``; ``p <- p - lr v``.  Buffers are created on demand."""
    for name in params:
        p = params[name]
        dt = p.value.dtype.type
        v = buffers.get(name)
        if v is None:
            v = np.zeros_like(p.value)
        v = dt(config.momentum) * v + p.grad + dt(config.weight_decay) * p.value
        buffers[name] = v
        p.value = p.value - dt(config.learning_rate) * v
    return params


def augment(sample, rng, config):
    """Random horizontal flip and crop, applied identically to image and labels."""
    image, labels = sample.image, sample.labels
    h, w = labels.shape
    if config.crop_size is not None:
        c = int(config.crop_size)
        if c > h or c > w:
            raise ShapeError(f"crop size {c} larger than image {h}x{w}")
        top = int(rng.integers(h - c + 1))
        left = int(rng.integers(w - c + 1))
        image, labels = crop(image, top, left, c, c), crop(labels, top, left, c, c)
    if rng.random() < config.hflip_prob:
        image, labels = hflip(image), hflip(labels)
    return Sample(image, labels)


def evaluate(model, dataset, batch_size=16):
    cm = ConfusionMatrix(model.spec.num_classes)
    for start in range(0, len(dataset), batch_size):
        batch = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
        probs = model.predict(np.stack([s.image for s in batch]))
        cm.accumulate(argmax_channels(probs), np.stack([s.labels for s in batch]))
    return cm


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    model: object
    log: list = field(default_factory=list)


def _write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"], f"{r['loss']:.6f}", f"{r['PA']:.6f}", f"{r['CA']:.6f}"])


def model_from_checkpoint(ckpt, precision=None):
    spec = parse_spec(ckpt.spec_text)
    dtype = next(iter(ckpt.params.values())).dtype if ckpt.params else np.float32
    model = build_model(spec, 0, precision or ("double" if dtype == np.float64 else "single"))
    model.params.load_state(ckpt.params)
    return model


def train(spec, dataset, config, val=None, resume=None, log_path=None):
    """Train ``spec`` on ``dataset`` and return a :class:`TrainResult`.

    Runs are deterministic for a fixed config: initialization, shuffling and
    augmentation all derive from ``config.seed``.  ``resume`` continues from a
    checkpoint written at an epoch boundary and reproduces the uninterrupted
    run.  Per-epoch PA/CA are measured on ``val`` (the training set if None).
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    K = spec.num_classes
    if config.reweight:
        weights = class_stats(dataset.label_maps(), K, config.eta_threshold).weights
    else:
        weights = np.ones(K)
    model = build_model(spec, config.seed, config.precision)
    add_loss(model, weights, config.divisor)
    rng = data_rng(config.seed)
    buffers = {}
    start_epoch = 0
    rows = []
    if resume is not None:
        model.params.load_state(resume.params)
        buffers = {k: np.array(v) for k, v in resume.buffers.items()}
        rng.bit_generator.state = resume.meta["rng_state"]
        start_epoch = resume.epoch
        rows = list(resume.meta.get("log", []))

    dt = model.dtype
    n = len(dataset)
    for epoch in range(start_epoch + 1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = [augment(dataset[int(i)], rng, config) for i in order[start:start + config.batch_size]]
            images = np.stack([s.image for s in batch]).astype(dt)
            labels = np.stack([s.labels for s in batch])
            loss, _ = model.loss_and_grads(images, labels)
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}, batch {b}: loss became {loss}")
            sgd_momentum_step(model.params, buffers, config)
            total += loss * config.divisor
        cm = evaluate(model, val if val is not None else dataset)
        row = {"epoch": epoch, "loss": total / n, "PA": pixel_accuracy(cm), "CA": class_accuracy(cm)}
        rows.append(row)
        log.info("epoch %d loss %.4f PA %.4f CA %.4f", epoch, row["loss"], row["PA"], row["CA"])

    ckpt = ckpt_io.Checkpoint(
        spec_text=format_spec(spec),
        params={k: v.copy() for k, v in model.params.state().items()},
        buffers={k: buffers[k] for k in model.params if k in buffers},
        epoch=max(start_epoch, config.epochs),
        meta={"rng_state": rng.bit_generator.state, "config": asdict(config),
              "class_weights": [float(w) for w in weights], "log": rows},
    )
    if log_path is not None:
        _write_log(rows, log_path)
    return TrainResult(ckpt, model, rows)
