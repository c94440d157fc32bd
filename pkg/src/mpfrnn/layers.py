"""Layer kernels: forward and backward passes as pure numpy functions.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``.  Weights use (out_channels, in_channels, kh, kw)
layout for convolution and (in_channels, out_channels, kh, kw) for the
transposed convolution, so a deconvolution with weights ``w`` is exactly the
adjoint of a convolution with the same ``w``.

Convolution is cross-correlation (no kernel flip).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

L2_EPS = 1e-12


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_out_size(n, k, stride=1, pad=0, dilation=1):
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def deconv_out_size(n, k, stride=1, pad=0, dilation=1):
    return (n - 1) * stride - 2 * pad + dilation * (k - 1) + 1


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        if min(self.kernel) < 1 or self.stride < 1 or self.dilation < 1:
            raise ShapeError(f"kernel, stride and dilation must be >= 1: {self}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0: {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError(f"channel counts must be >= 1: {self}")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels) + self.kernel

    def output_hw(self, h, w):
        oh = conv_out_size(h, self.kernel[0], self.stride, self.padding, self.dilation)
        ow = conv_out_size(w, self.kernel[1], self.stride, self.padding, self.dilation)
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self} maps {h}x{w} to empty output {oh}x{ow}")
        return oh, ow


@dataclass(frozen=True)
class DeconvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (2, 2)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        if min(self.kernel) < 1 or self.stride < 1:
            raise ShapeError(f"kernel and stride must be >= 1: {self}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0: {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError(f"channel counts must be >= 1: {self}")

    @property
    def weight_shape(self):
        return (self.in_channels, self.out_channels) + self.kernel

    def output_hw(self, h, w):
        oh = deconv_out_size(h, self.kernel[0], self.stride, self.padding)
        ow = deconv_out_size(w, self.kernel[1], self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self} maps {h}x{w} to empty output {oh}x{ow}")
        return oh, ow


@dataclass(frozen=True)
class L2ScaleSpec:
    channels: int
    per_channel: bool = False
    gamma_init: float = 10.0

    @property
    def gamma_shape(self):
        return (1, self.channels if self.per_channel else 1, 1, 1)


# -- convolution --------------------------------------------------------------

def _windows(xp, kh, kw, stride, dilation, oh, ow):
    """Gather sliding windows: (N, C, H, W) -> (N, C, kh, kw, oh, ow)."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + stride * (oh - 1) + 1:stride,
                                  c0:c0 + stride * (ow - 1) + 1:stride]
    return cols


def _scatter_windows(dcols, padded_hw, stride, dilation):
    """Adjoint of ``_windows``: accumulate (N, C, kh, kw, oh, ow) into a padded map."""
    n, c, kh, kw, oh, ow = dcols.shape
    out = np.zeros((n, c) + tuple(padded_hw), dtype=dcols.dtype)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            out[:, :, r0:r0 + stride * (oh - 1) + 1:stride,
                c0:c0 + stride * (ow - 1) + 1:stride] += dcols[:, :, i, j]
    return out


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv(x, w, stride, pad, dilation):
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"input has {c} channels, weights expect {ci}")
    oh = conv_out_size(h, kh, stride, pad, dilation)
    ow = conv_out_size(wd, kw, stride, pad, dilation)
    if oh < 1 or ow < 1:
        raise ShapeError(f"convolution output would be empty ({oh}x{ow})")
    cols = _windows(_pad(x, pad), kh, kw, stride, dilation, oh, ow)
    out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))  # (N, oh, ow, O)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cols


def _conv_data_adjoint(dout, w, in_hw, stride, pad, dilation):
    """Gradient of a convolution w.r.t. its input, for an input of size ``in_hw``."""
    kh, kw = w.shape[2:]
    dcols = np.tensordot(w, dout, axes=([0], [1]))  # (C, kh, kw, N, oh, ow)
    dcols = dcols.transpose(3, 0, 1, 2, 4, 5)
    h, wd = in_hw
    dxp = _scatter_windows(dcols, (h + 2 * pad, wd + 2 * pad), stride, dilation)
    if pad:
        dxp = dxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(dxp)


def conv2d_forward(x, w, b=None, stride=1, pad=0, dilation=1):
    out, cols = _conv(x, w, stride, pad, dilation)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out, (x.shape, w, cols, stride, pad, dilation, b is not None)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)``; ``db`` is None for bias-free layers."""
    x_shape, w, cols, stride, pad, dilation, has_bias = cache
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 4, 5]))
    dx = _conv_data_adjoint(dout, w, x_shape[2:], stride, pad, dilation)
    db = dout.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1) if has_bias else None
    return dx, dw, db


# -- transposed convolution ---------------------------------------------------

def deconv2d_forward(x, w, b=None, stride=1, pad=0):
    n, c, h, wd = x.shape
    ci, o, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"input has {c} channels, weights expect {ci}")
    oh = deconv_out_size(h, kh, stride, pad)
    ow = deconv_out_size(wd, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"deconvolution output would be empty ({oh}x{ow})")
    out = _conv_data_adjoint(x, w, (oh, ow), stride, pad, 1)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out, (x, w, stride, pad, b is not None)


def deconv2d_backward(dout, cache):
    x, w, stride, pad, has_bias = cache
    # (Cin, Cout, kh, kw) read as conv weights maps dout back onto x's grid
    dx, cols = _conv(dout, w, stride, pad, 1)
    dw = np.tensordot(x, cols, axes=([0, 2, 3], [0, 4, 5]))
    db = dout.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1) if has_bias else None
    return dx, dw, db


# -- pooling ------------------------------------------------------------------

def maxpool_forward(x, window=2, stride=None):
    k = int(window)
    s = int(stride or window)
    n, c, h, w = x.shape
    oh = conv_out_size(h, k, s)
    ow = conv_out_size(w, k, s)
    if oh < 1 or ow < 1:
        raise ShapeError(f"pool window {k} does not fit a {h}x{w} input")
    cols = _windows(x, k, k, s, 1, oh, ow).reshape(n, c, k * k, oh, ow)
    # argmax returns the first maximum in row-major window order
    arg = np.argmax(cols, axis=2)
    out = np.take_along_axis(cols, arg[:, :, None], axis=2)[:, :, 0]
    return out, (x.shape, k, s, arg)


def maxpool_backward(dout, cache):
    x_shape, k, s, arg = cache
    n, c, oh, ow = dout.shape
    dcols = np.zeros((n, c, k * k, oh, ow), dtype=dout.dtype)
    np.put_along_axis(dcols, arg[:, :, None], dout[:, :, None], axis=2)
    return _scatter_windows(dcols.reshape(n, c, k, k, oh, ow), x_shape[2:], s, 1)


# -- pointwise ----------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def l2scale_forward(x, gamma, eps=L2_EPS):
    """``gamma * x / ||x||`` with the norm taken over channels at each position.

    ``gamma`` has shape (1, 1, 1, 1) or (1, C, 1, 1).  A channel vector that is
    exactly zero maps to zero and passes no gradient.
    """
    sq = np.sum(x * x, axis=1, keepdims=True)
    norm = np.sqrt(sq + eps)
    xhat = x / norm
    return gamma * xhat, (xhat, norm, sq > 0, gamma)


def l2scale_backward(dout, cache):
    xhat, norm, nonzero, gamma = cache
    u = dout * gamma
    dx = (u - xhat * np.sum(xhat * u, axis=1, keepdims=True)) / norm
    dx = dx * nonzero
    dg = dout * xhat
    if gamma.shape[1] == 1:
        dg = dg.sum().reshape(1, 1, 1, 1)
    else:
        dg = dg.sum(axis=(0, 2, 3)).reshape(gamma.shape)
    return dx, dg.astype(gamma.dtype)


def softmax_channels(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_forward(x):
    y = softmax_channels(x)
    return y, y


def softmax_backward(dout, y):
    return y * (dout - np.sum(y * dout, axis=1, keepdims=True))
