import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpfrnn import tensor
from mpfrnn.errors import ShapeError


def test_zeros_and_precision():
    a = tensor.zeros((2, 3, 4, 5))
    assert a.shape == (2, 3, 4, 5) and a.dtype == np.float64 and not a.any()
    assert tensor.zeros((1, 1, 1, 1), "single").dtype == np.float32
    with pytest.raises(ValueError):
        tensor.dtype_for("half")


@pytest.mark.parametrize("shape", [(0, 1, 1, 1), (1, -2, 1, 1), (1, 1, 1.5, 1)])
def test_bad_shapes(shape):
    with pytest.raises(ShapeError):
        tensor.Shape(*shape).validate()


def test_shape_overflow():
    with pytest.raises(OverflowError):
        tensor.Shape(2**20, 2**20, 2**20, 2**20).validate()


def test_ewise_add_checks_shapes():
    a = np.ones((1, 2, 3, 3))
    np.testing.assert_array_equal(tensor.ewise_add(a, a), 2 * a)
    with pytest.raises(ShapeError):
        tensor.ewise_add(a, np.ones((1, 2, 3, 4)))


def test_scale_keeps_dtype():
    a = np.ones((1, 1, 2, 2), np.float32)
    assert tensor.scale(a, 0.5).dtype == np.float32


@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 1000))
def test_channel_norms_match_loop(n, c, seed):
    a = np.random.default_rng(seed).normal(size=(n, c, 3, 2))
    out = tensor.channel_l2_norms(a)
    assert out.shape == (n, 1, 3, 2)
    for i in range(n):
        for r in range(3):
            for q in range(2):
                assert out[i, 0, r, q] == pytest.approx(np.sqrt(sum(a[i, k, r, q] ** 2 for k in range(c))))


def test_argmax_ties_go_to_lowest_index():
    a = np.zeros((1, 3, 1, 2))
    a[0, 1, 0, 1] = a[0, 2, 0, 1] = 1.0
    np.testing.assert_array_equal(tensor.argmax_channels(a), [[[0, 1]]])
    with pytest.raises(ShapeError):
        tensor.argmax_channels(np.zeros((2, 2)))


def test_hflip_and_crop():
    a = np.arange(12).reshape(1, 1, 3, 4)
    np.testing.assert_array_equal(tensor.hflip(a)[0, 0, 0], [3, 2, 1, 0])
    np.testing.assert_array_equal(tensor.hflip(tensor.hflip(a)), a)
    lab = np.arange(12).reshape(3, 4)
    np.testing.assert_array_equal(tensor.crop(lab, 1, 2, 2, 2), [[6, 7], [10, 11]])
    with pytest.raises(ShapeError):
        tensor.crop(lab, 2, 0, 2, 2)
