"""Confusion-matrix based segmentation metrics (PA, CA, mIoU).

The summary metrics are computed as exact fractions of integer pixel counts
and rounded once, so they do not depend on summation order.
"""

import csv
from fractions import Fraction

import numpy as np

from .loss import VOID


class ConfusionMatrix:
    """K x K pixel counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes, counts=None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)

    def accumulate(self, predictions, truth, void=VOID):
        pred = np.asarray(predictions).reshape(-1).astype(np.int64)
        gt = np.asarray(truth).reshape(-1).astype(np.int64)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction/truth size mismatch: {pred.size} vs {gt.size}")
        keep = gt != void
        pred, gt = pred[keep], gt[keep]
        K = self.num_classes
        if gt.size and (gt.min() < 0 or gt.max() >= K or pred.min() < 0 or pred.max() >= K):
            raise ValueError(f"labels outside 0..{K - 1}")
        self.counts += np.bincount(gt * K + pred, minlength=K * K).reshape(K, K)
        return self

    def merge(self, other):
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    __add__ = merge

    @property
    def total(self):
        return int(self.counts.sum())

    def per_class_accuracy(self):
        """Recall per class; NaN where the class has no ground-truth pixels."""
        gt = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(gt > 0, np.diag(self.counts) / np.maximum(gt, 1), np.nan)

    def per_class_iou(self):
        """IoU per class; NaN where the class is neither present nor predicted."""
        tp = np.diag(self.counts)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        return np.where(union > 0, tp / np.maximum(union, 1), np.nan)


def accumulate(cm, predictions, truth, void=VOID):
    return cm.accumulate(predictions, truth, void)


def _ratios(num, den):
    return [Fraction(int(a), int(b)) for a, b in zip(num, den) if b > 0]


def _mean(fracs):
    return float(sum(fracs) / len(fracs)) if fracs else float("nan")


def pixel_accuracy(cm):
    total = int(cm.counts.sum())
    return float(Fraction(int(np.trace(cm.counts)), total)) if total else float("nan")


def class_accuracy(cm):
    """Mean recall over classes with ground-truth pixels."""
    return _mean(_ratios(np.diag(cm.counts), cm.counts.sum(axis=1)))


def mean_iou(cm):
    """Mean IoU over classes that are present or predicted."""
    tp = np.diag(cm.counts)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    return _mean(_ratios(tp, union))


def format_report(cm, class_names=None):
    acc = cm.per_class_accuracy()
    iou = cm.per_class_iou()
    gt = cm.counts.sum(axis=1)
    lines = [f"{'class':>8} {'pixels':>10} {'accuracy':>9} {'IoU':>7}"]
    for k in range(cm.num_classes):
        name = class_names[k] if class_names else str(k)
        a = "-" if np.isnan(acc[k]) else f"{acc[k]:.4f}"
        i = "-" if np.isnan(iou[k]) else f"{iou[k]:.4f}"
        lines.append(f"{name:>8} {gt[k]:>10d} {a:>9} {i:>7}")
    lines.append(f"PA = {pixel_accuracy(cm):.4f}  CA = {class_accuracy(cm):.4f}  "
                 f"mIoU = {mean_iou(cm):.4f}")
    return "\n".join(lines)


PER_CLASS_COLUMNS = ["class", "gt_pixels", "pred_pixels", "accuracy", "iou"]
SUMMARY_COLUMNS = ["PA", "CA", "mIoU", "pixels"]


def write_report_csv(cm, path, summary_path):
    acc = cm.per_class_accuracy()
    iou = cm.per_class_iou()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PER_CLASS_COLUMNS)
        for k in range(cm.num_classes):
            w.writerow([k, int(cm.counts[k].sum()), int(cm.counts[:, k].sum()),
                        "" if np.isnan(acc[k]) else f"{acc[k]:.6f}",
                        "" if np.isnan(iou[k]) else f"{iou[k]:.6f}"])
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([f"{pixel_accuracy(cm):.6f}", f"{class_accuracy(cm):.6f}",
                    f"{mean_iou(cm):.6f}", cm.total])
