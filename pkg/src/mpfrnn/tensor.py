"""Dense rank-4 tensors and the elementwise kernels built on them.

Tensors are plain ``numpy.ndarray`` objects in (batch, channel, height, width)
layout.  Every function here returns a fresh array and never mutates its
arguments.
"""

from typing import NamedTuple

import numpy as np

from .errors import ShapeError

PRECISIONS = {"single": np.float32, "double": np.float64}

# element counts above this cannot be indexed by numpy on 64-bit platforms
_MAX_ELEMENTS = np.iinfo(np.intp).max


class Shape(NamedTuple):
    batch: int
    channels: int
    height: int
    width: int

    @property
    def size(self):
        return self.batch * self.channels * self.height * self.width

    def validate(self):
        if any(int(d) != d or d < 1 for d in self):
            raise ShapeError(f"all dimensions must be integers >= 1, got {tuple(self)}")
        n = 1
        for d in self:
            n *= int(d)
        if n > _MAX_ELEMENTS:
            raise OverflowError(f"element count {n} of shape {tuple(self)} overflows")
        return self


def dtype_for(precision):
    """Map ``"single"``/``"double"`` (or a numpy dtype) to a float dtype."""
    if precision in PRECISIONS:
        return np.dtype(PRECISIONS[precision])
    dt = np.dtype(precision)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {precision!r}")
    return dt


def zeros(shape, precision="double"):
    shape = Shape(*shape).validate()
    return np.zeros(tuple(shape), dtype=dtype_for(precision))


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def ewise_add(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    return a + b


def scale(a, s):
    a = np.asarray(a)
    return (a * a.dtype.type(s)) if a.dtype.kind == "f" else a * s


def channel_l2_norms(a):
    """L2 norm over the channel axis; output shape is (batch, 1, H, W)."""
    a = np.asarray(a)
    return np.sqrt(np.sum(a * a, axis=1, keepdims=True))


def argmax_channels(a):
    """Per-position channel argmax, shape (batch, H, W).

    Ties go to the lowest channel index.
    """
    a = np.asarray(a)
    if a.ndim != 4 or a.shape[1] < 1:
        raise ShapeError(f"expected a rank-4 tensor with >= 1 channel, got {a.shape}")
    return np.argmax(a, axis=1)


def hflip(a):
    """Mirror the width (last) axis.  Works for tensors and label maps."""
    return np.ascontiguousarray(np.asarray(a)[..., ::-1])


def crop(a, top, left, h, w):
    """Copy the ``h`` x ``w`` window at (top, left) of the last two axes."""
    a = np.asarray(a)
    H, W = a.shape[-2:]
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > H or left + w > W:
        raise ShapeError(
            f"crop window (top={top}, left={left}, h={h}, w={w}) outside {H}x{W}"
        )
    return a[..., top:top + h, left:left + w].copy()
