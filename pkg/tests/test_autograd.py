import numpy as np
import pytest

from mpfrnn.autograd import Graph, ParameterStore, finite_difference_check
from mpfrnn.errors import GraphError, ShapeError


def _shared_conv_chain(rng):
    """x -> conv(W) -> relu -> conv(W) -> dot: one weight used twice."""
    g = Graph()
    x = g.input("image")
    ps = ParameterStore()
    ps.add("W", rng.normal(size=(2, 2, 3, 3)))
    a = g.add("conv", [x], ("W",), stride=1, pad=1, dilation=1)
    r = g.add("relu", [a])
    b = g.add("conv", [r], ("W",), stride=1, pad=1, dilation=1)
    loss = g.add("dot", [b], other=rng.normal(size=(1, 2, 5, 5)))
    return g, ps, loss, {"image": rng.normal(size=(1, 2, 5, 5))}


def test_shared_parameter_gradient_accumulates():
    rng = np.random.default_rng(0)
    g, ps, loss, inputs = _shared_conv_chain(rng)
    g.forward(inputs, ps)
    g.backward(loss, ps)
    assert g.bindings()["W"] == [1, 3]
    report = finite_difference_check(g, inputs, ps, loss)
    assert report["W"] < 1e-6


def test_backward_is_linear_in_seed():
    rng = np.random.default_rng(1)
    g = Graph()
    x = g.input("image")
    ps = ParameterStore()
    ps.add("W", rng.normal(size=(3, 2, 3, 3)))
    h = g.add("conv", [x], ("W",), stride=1, pad=1, dilation=1)
    vals = g.forward({"image": rng.normal(size=(1, 2, 4, 4))}, ps)
    s1, s2 = rng.normal(size=vals[h].shape), rng.normal(size=vals[h].shape)
    grads = []
    for seed in (s1, s2, 2 * s1 - 3 * s2):
        ps.zero_grad()
        gi = g.backward(h, ps, grad_output=seed)["image"]
        grads.append((gi, ps.grad("W").copy()))
    for k in range(2):
        np.testing.assert_allclose(grads[2][k], 2 * grads[0][k] - 3 * grads[1][k], atol=1e-12)


def test_gradients_accumulate_until_zeroed():
    rng = np.random.default_rng(2)
    g, ps, loss, inputs = _shared_conv_chain(rng)
    g.forward(inputs, ps)
    g.backward(loss, ps)
    once = ps.grad("W").copy()
    g.backward(loss, ps)
    np.testing.assert_allclose(ps.grad("W"), 2 * once)
    ps.zero_grad()
    assert not ps.grad("W").any()


def test_forward_only_runs_needed_nodes():
    g = Graph()
    x = g.input("image")
    y = g.input("other")
    a = g.add("relu", [x])
    g.add("relu", [y])
    vals = g.forward({"image": np.ones((1, 1, 1, 1))}, ParameterStore(), outputs=[a])
    assert vals[a] is not None and vals[3] is None


def test_graph_errors():
    g = Graph()
    x = g.input("image")
    with pytest.raises(GraphError):
        g.add("relu", [5])
    with pytest.raises(GraphError):
        g.add("bogus", [x])
    with pytest.raises(GraphError):
        g.input("image")
    r = g.add("relu", [x])
    with pytest.raises(GraphError):
        g.backward(r, ParameterStore())
    with pytest.raises(GraphError):
        g.forward({}, ParameterStore())
    g.forward({"image": np.ones((1, 1, 2, 2))}, ParameterStore())
    with pytest.raises(GraphError):
        g.backward(r, ParameterStore())  # non-scalar without a seed
    with pytest.raises(ShapeError):
        g.backward(r, ParameterStore(), grad_output=np.ones((1, 1, 3, 3)))
    c = g.add("conv", [x], ("missing",))
    with pytest.raises(GraphError):
        g.forward({"image": np.ones((1, 1, 2, 2))}, ParameterStore(), outputs=[c])


def test_add_rejects_mismatched_shapes():
    g = Graph()
    x = g.input("a")
    y = g.input("b")
    s = g.add("add", [x, y])
    with pytest.raises(ShapeError):
        g.forward({"a": np.ones((1, 1, 2, 2)), "b": np.ones((1, 1, 3, 3))}, ParameterStore(),
                  outputs=[s])


def test_parameter_store():
    ps = ParameterStore()
    ps.add("a", np.ones((1, 2, 1, 1)))
    with pytest.raises(GraphError):
        ps.add("a", np.ones(1))
    assert ps.count() == 2 and "a" in ps and len(ps) == 1
    with pytest.raises(GraphError):
        ps.load_state({"b": np.ones((1, 2, 1, 1))})
    with pytest.raises(ShapeError):
        ps.load_state({"a": np.ones((1, 3, 1, 1))})
    ps.load_state({"a": np.full((1, 2, 1, 1), 3.0)})
    assert ps.value("a")[0, 1, 0, 0] == 3.0


def test_finite_difference_requires_double():
    g = Graph()
    x = g.input("image")
    ps = ParameterStore()
    ps.add("W", np.ones((1, 1, 1, 1), np.float32))
    h = g.add("conv", [x], ("W",))
    s = g.add("sum", [h])
    with pytest.raises(TypeError):
        finite_difference_check(g, {"image": np.ones((1, 1, 2, 2), np.float32)}, ps, s)
