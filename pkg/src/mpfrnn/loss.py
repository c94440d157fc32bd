"""Class re-weighting and the weighted per-pixel cross-entropy."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

VOID = 255

# log10 ratios this close to an integer are snapped to it before the ceiling,
# so that e.g. f = eta / 100 yields exactly 2 despite rounding in the ratio
_LOG_SNAP = 1e-9


@dataclass
class ClassStats:
    frequencies: np.ndarray
    eta: float
    weights: np.ndarray

    def report(self):
        lines = ["class  frequency  weight"]
        for k, (f, w) in enumerate(zip(self.frequencies, self.weights)):
            lines.append(f"{k:>5}  {f:9.6f}  {w:g}")
        lines.append(f"eta = {self.eta:.6f}")
        return "\n".join(lines)


def class_frequencies(label_maps, num_classes, void=VOID):
    """Pixel-count fraction of each class over all label maps, void excluded."""
    counts = np.zeros(num_classes, dtype=np.int64)
    seen = 0
    for labels in label_maps:
        seen += 1
        lab = np.asarray(labels).reshape(-1)
        lab = lab[lab != void]
        if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
            raise DataError(f"label outside 0..{num_classes - 1}")
        counts += np.bincount(lab.astype(np.int64), minlength=num_classes)
    if seen == 0:
        raise DataError("cannot compute class frequencies of an empty dataset")
    total = counts.sum()
    if total == 0:
        raise DataError("dataset has no labelled (non-void) pixels")
    return counts / total


def eta_from_rule(frequencies, threshold=0.85):
    """Frequency of the last class in the smallest frequent-class prefix.

    Classes are sorted by descending frequency (ties by class index) and
    accumulated until the running total reaches ``threshold``.
    """
    f = np.asarray(frequencies, dtype=np.float64)
    order = np.argsort(-f, kind="stable")
    total = 0.0
    for k in order:
        total += f[k]
        if total >= threshold - 1e-12:
            return float(f[k])
    return float(f[order[-1]])


def class_weights(frequencies, eta):
    """``2 ** ceil(log10(eta / f))`` per class; zero-frequency classes get 0."""
    out = np.zeros(len(frequencies))
    for k, f in enumerate(frequencies):
        if f <= 0:
            continue
        e = math.log10(eta / f)
        r = round(e)
        if abs(e - r) < _LOG_SNAP:
            e = r
        out[k] = math.ldexp(1.0, math.ceil(e))
    return out


def class_stats(label_maps, num_classes, threshold=0.85, void=VOID):
    f = class_frequencies(label_maps, num_classes, void)
    eta = eta_from_rule(f, threshold)
    return ClassStats(f, eta, class_weights(f, eta))


def _check_labels(probs, labels, num_weights, void):
    if probs.ndim != 4:
        raise ShapeError(f"expected (N, K, H, W) probabilities, got {probs.shape}")
    n, k, h, w = probs.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels {labels.shape} do not match probabilities {probs.shape}")
    if num_weights != k:
        raise ShapeError(f"{num_weights} class weights for {k} classes")
    bad = (labels != void) & ((labels < 0) | (labels >= k))
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label {int(labels[pos])} at {pos} outside 0..{k - 1}")


def weighted_pixel_ce_forward(probs, labels, class_weights, divisor=1.0, void=VOID):
    """``-sum(w[y] * log p[y]) / divisor`` over non-void pixels."""
    labels = np.asarray(labels)
    weights = np.asarray(class_weights, dtype=probs.dtype)
    _check_labels(probs, labels, len(weights), void)
    valid = labels != void
    y = np.where(valid, labels, 0).astype(np.intp)
    p = np.take_along_axis(probs, y[:, None], axis=1)[:, 0]
    p = np.maximum(p, np.finfo(probs.dtype).tiny)
    wy = weights[y] * valid
    loss = -np.sum(wy * np.log(p)) / probs.dtype.type(divisor)
    return np.asarray(loss, dtype=probs.dtype), (probs.shape, y, p, wy, divisor)


def weighted_pixel_ce_backward(cache):
    shape, y, p, wy, divisor = cache
    grad = np.zeros(shape, dtype=p.dtype)
    np.put_along_axis(grad, y[:, None], (-wy / p / p.dtype.type(divisor))[:, None], axis=1)
    return grad


def weighted_pixel_ce(probs, labels, class_weights, divisor=1.0, void=VOID):
    loss, _ = weighted_pixel_ce_forward(np.asarray(probs), labels, class_weights, divisor, void)
    return float(loss)
