import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpfrnn import layers
from mpfrnn.errors import ShapeError


def naive_conv(x, w, b, stride, pad, dil):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - dil * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * pad - dil * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for a in range(n):
        for f in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else b[0, f, 0, 0]
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                r = i * stride - pad + u * dil
                                q = j * stride - pad + v * dil
                                if 0 <= r < h and 0 <= q < wd:
                                    acc += x[a, ch, r, q] * w[f, ch, u, v]
                    out[a, f, i, j] = acc
    return out


def naive_deconv(x, w, b, stride, pad):
    # scatter form: input pixel (i, j) adds w * x to a k x k output patch
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (wd - 1) * stride - 2 * pad + kw
    full = np.zeros((n, o, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for a in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(wd):
                    full[a, :, i * stride:i * stride + kh, j * stride:j * stride + kw] += \
                        x[a, ch, i, j] * w[ch]
    out = full[:, :, pad:pad + oh, pad:pad + ow]
    if b is not None:
        out = out + b
    return out


def naive_pool(x, k, s):
    n, c, h, w = x.shape
    oh, ow = (h - k) // s + 1, (w - k) // s + 1
    out = np.empty((n, c, oh, ow))
    for i in range(oh):
        for j in range(ow):
            out[:, :, i, j] = x[:, :, i * s:i * s + k, j * s:j * s + k].max(axis=(2, 3))
    return out


conv_cases = st.tuples(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3),
                       st.integers(4, 8), st.sampled_from([1, 2, 3]), st.integers(1, 2),
                       st.integers(0, 2), st.integers(1, 2), st.booleans())


@settings(max_examples=30, deadline=None)
@given(case=conv_cases, seed=st.integers(0, 1000))
def test_conv_matches_loop_oracle(case, seed):
    n, c, o, hw, k, s, p, d, bias = case
    if hw + 2 * p < d * (k - 1) + 1:
        return
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c, hw, hw + 1))
    w = rng.normal(size=(o, c, k, k))
    b = rng.normal(size=(1, o, 1, 1)) if bias else None
    out, _ = layers.conv2d_forward(x, w, b, s, p, d)
    np.testing.assert_allclose(out, naive_conv(x, w, b, s, p, d), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 3), o=st.integers(1, 3), hw=st.integers(1, 5),
       ks=st.sampled_from([(1, 1, 0), (2, 2, 0), (4, 2, 1), (3, 3, 0), (3, 1, 1), (6, 3, 0)]),
       seed=st.integers(0, 1000))
def test_deconv_matches_scatter_oracle(n, c, o, hw, ks, seed):
    k, s, p = ks
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c, hw, hw))
    w = rng.normal(size=(c, o, k, k))
    b = rng.normal(size=(1, o, 1, 1))
    out, _ = layers.deconv2d_forward(x, w, b, s, p)
    np.testing.assert_allclose(out, naive_deconv(x, w, b, s, p), rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), k=st.sampled_from([1, 3, 4]), s=st.integers(1, 3),
       p=st.integers(0, 1), m=st.integers(1, 4))
def test_deconv_is_adjoint_of_conv(seed, k, s, p, m):
    # <conv(x), y> == <x, deconv(y)> with the same (C_out, C_in, k, k) array,
    # on sizes where the deconvolution restores the conv input size exactly
    hw = s * m + k - 2 * p
    if hw < 1:
        return
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, hw, hw))
    w = rng.normal(size=(4, 3, k, k))
    y_shape = layers.conv2d_forward(x, w, None, s, p)[0].shape
    y = rng.normal(size=y_shape)
    lhs = np.sum(layers.conv2d_forward(x, w, None, s, p)[0] * y)
    back, _ = layers.deconv2d_forward(y, w, None, s, p)
    assert back.shape == x.shape
    assert lhs == pytest.approx(np.sum(x * back), rel=1e-10)


def test_output_sizes():
    assert layers.conv_out_size(32, 3, 1, 1) == 32
    assert layers.conv_out_size(32, 3, 2, 1) == 16
    assert layers.conv_out_size(16, 3, 1, 2, 2) == 16
    assert layers.deconv_out_size(8, 4, 2, 1) == 16
    assert layers.deconv_out_size(8, 3, 3, 0) == 24
    with pytest.raises(ShapeError):
        layers.conv2d_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        layers.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 1, 1)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), k=st.integers(1, 3), s=st.integers(1, 3))
def test_maxpool_matches_oracle(seed, k, s):
    x = np.random.default_rng(seed).normal(size=(2, 3, 7, 6))
    out, _ = layers.maxpool_forward(x, k, s)
    np.testing.assert_array_equal(out, naive_pool(x, k, s))


def test_maxpool_tie_routes_gradient_to_first_in_scan_order():
    x = np.zeros((1, 1, 2, 2))
    out, cache = layers.maxpool_forward(x, 2, 2)
    dx = layers.maxpool_backward(np.ones_like(out), cache)
    np.testing.assert_array_equal(dx[0, 0], [[1, 0], [0, 0]])


def test_maxpool_overlapping_windows_accumulate():
    x = np.array([[[[0, 0, 0], [0, 5, 0], [0, 0, 0]]]], dtype=float)
    out, cache = layers.maxpool_forward(x, 2, 1)
    dx = layers.maxpool_backward(np.ones_like(out), cache)
    assert dx[0, 0, 1, 1] == 4 and dx.sum() == 4


def test_relu():
    x = np.array([-1.0, 0.0, 2.0])
    y, mask = layers.relu_forward(x)
    np.testing.assert_array_equal(y, [0, 0, 2])
    np.testing.assert_array_equal(layers.relu_backward(np.ones(3), mask), [0, 0, 1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), gamma=st.floats(0.1, 20), c=st.integers(1, 6))
def test_l2scale_has_norm_gamma(seed, gamma, c):
    x = np.random.default_rng(seed).normal(size=(2, c, 3, 4))
    y, _ = layers.l2scale_forward(x, np.full((1, 1, 1, 1), gamma))
    # eps inside the root shrinks the norm by about eps / (2 |x|^2)
    big = (x ** 2).sum(axis=1) > 1e-3
    np.testing.assert_allclose(np.sqrt((y ** 2).sum(axis=1))[big], gamma, rtol=1e-9)


def test_l2scale_scale_invariant_and_channel_gamma():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 3, 2, 2))
    g = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1)
    a, _ = layers.l2scale_forward(x, g)
    b, _ = layers.l2scale_forward(7.5 * x, g)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    xhat = x / np.linalg.norm(x, axis=1, keepdims=True)
    np.testing.assert_allclose(a, g * xhat, rtol=1e-9)


def test_l2scale_zero_vector_gives_zero_output_and_gradient():
    x = np.zeros((1, 4, 2, 2))
    x[0, :, 0, 0] = [1.0, 2.0, 2.0, 0.0]
    y, cache = layers.l2scale_forward(x, np.full((1, 1, 1, 1), 10.0))
    assert np.all(np.isfinite(y))
    assert np.all(y[0, :, 1, 1] == 0)
    dx, dg = layers.l2scale_backward(np.ones_like(y), cache)
    assert np.all(dx[0, :, 1:, :] == 0) and np.all(dx[0, :, :, 1:] == 0)
    assert np.all(np.isfinite(dx)) and dg.shape == (1, 1, 1, 1)


def test_softmax_rows_sum_to_one_and_are_shift_invariant():
    x = np.random.default_rng(0).normal(size=(2, 5, 3, 3)) * 50
    y = layers.softmax_channels(x)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(layers.softmax_channels(x + 1000.0), y, rtol=1e-9)
    big = np.array([[[[1000.0]], [[0.0]]]])
    assert np.all(np.isfinite(layers.softmax_channels(big)))


def _numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + eps
        a = f()
        flat[i] = o - eps
        c = f()
        flat[i] = o
        g.reshape(-1)[i] = (a - c) / (2 * eps)
    return g


@pytest.mark.parametrize("stride,pad,dil", [(1, 1, 1), (2, 1, 1), (1, 2, 2)])
def test_conv_backward_matches_numeric(stride, pad, dil):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 6, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(1, 3, 1, 1))
    out, cache = layers.conv2d_forward(x, w, b, stride, pad, dil)
    r = rng.normal(size=out.shape)
    dx, dw, db = layers.conv2d_backward(r, cache)

    def f():
        return np.sum(layers.conv2d_forward(x, w, b, stride, pad, dil)[0] * r)

    for analytic, var in ((dx, x), (dw, w), (db, b)):
        np.testing.assert_allclose(analytic, _numeric_grad(f, var), rtol=1e-6, atol=1e-7)


def test_deconv_backward_matches_numeric():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 3, 4))
    w = rng.normal(size=(3, 2, 4, 4))
    b = rng.normal(size=(1, 2, 1, 1))
    out, cache = layers.deconv2d_forward(x, w, b, 2, 1)
    r = rng.normal(size=out.shape)
    dx, dw, db = layers.deconv2d_backward(r, cache)

    def f():
        return np.sum(layers.deconv2d_forward(x, w, b, 2, 1)[0] * r)

    for analytic, var in ((dx, x), (dw, w), (db, b)):
        np.testing.assert_allclose(analytic, _numeric_grad(f, var), rtol=1e-6, atol=1e-7)


def test_l2scale_and_softmax_backward_match_numeric():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 3, 2, 2))
    g = rng.uniform(1, 3, (1, 3, 1, 1))
    r = rng.normal(size=x.shape)
    y, cache = layers.l2scale_forward(x, g)
    dx, dg = layers.l2scale_backward(r, cache)

    def f():
        return np.sum(layers.l2scale_forward(x, g)[0] * r)

    np.testing.assert_allclose(dx, _numeric_grad(f, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dg, _numeric_grad(f, g), rtol=1e-6, atol=1e-8)

    y, sm = layers.softmax_forward(x)

    def h():
        return np.sum(layers.softmax_forward(x)[0] * r)

    np.testing.assert_allclose(layers.softmax_backward(r, sm), _numeric_grad(h, x),
                               rtol=1e-6, atol=1e-9)
