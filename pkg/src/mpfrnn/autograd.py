"""Static computation graphs with reverse-mode differentiation.

A :class:`Graph` is an append-only list of nodes.  A node may only read
nodes that were added before it, so the node list is always a valid
topological order and cycles cannot be built.  Recurrence is expressed by
unrolling: the same named parameter can be bound to several nodes, and its
gradient is the sum over all of them.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import GraphError, ShapeError


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = None
    shared: bool = False

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)


class ParameterStore:
    """Named parameters with gradient accumulators."""

    def __init__(self):
        self.entries = {}

    def add(self, name, value, shared=False):
        if name in self.entries:
            raise GraphError(f"parameter {name!r} already exists")
        self.entries[name] = Parameter(np.array(value), shared=shared)
        return name

    def __getitem__(self, name):
        return self.entries[name]

    def __contains__(self, name):
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self):
        return list(self.entries)

    def value(self, name):
        return self.entries[name].value

    def grad(self, name):
        return self.entries[name].grad

    def zero_grad(self):
        for p in self.entries.values():
            p.grad = np.zeros_like(p.value)

    def count(self):
        return sum(p.value.size for p in self.entries.values())

    def state(self):
        return {k: p.value for k, p in self.entries.items()}

    def load_state(self, values):
        missing = set(self.entries) - set(values)
        extra = set(values) - set(self.entries)
        if missing or extra:
            raise GraphError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in values.items():
            p = self.entries[k]
            if p.value.shape != v.shape:
                raise ShapeError(f"{k}: expected shape {p.value.shape}, got {v.shape}")
            p.value = np.array(v, dtype=p.value.dtype)
            p.grad = np.zeros_like(p.value)

    def astype(self, dtype):
        out = ParameterStore()
        for k, p in self.entries.items():
            out.entries[k] = Parameter(p.value.astype(dtype), shared=p.shared)
        return out


# -- operations ---------------------------------------------------------------
#
# forward(inputs, params, **attrs) -> (out, cache)
# backward(dout, cache, **attrs) -> (input_grads, param_grads); a None entry
# means "no gradient flows there".

def _input_fwd(inputs, params, name):
    raise AssertionError("input nodes are fed, not evaluated")


def _conv_fwd(inputs, params, stride=1, pad=0, dilation=1):
    b = params[1] if len(params) > 1 else None
    return layers.conv2d_forward(inputs[0], params[0], b, stride, pad, dilation)


def _conv_bwd(dout, cache, **_):
    dx, dw, db = layers.conv2d_backward(dout, cache)
    return [dx], [dw] if db is None else [dw, db]


def _deconv_fwd(inputs, params, stride=1, pad=0):
    b = params[1] if len(params) > 1 else None
    return layers.deconv2d_forward(inputs[0], params[0], b, stride, pad)


def _deconv_bwd(dout, cache, **_):
    dx, dw, db = layers.deconv2d_backward(dout, cache)
    return [dx], [dw] if db is None else [dw, db]


def _pool_fwd(inputs, params, window=2, stride=2):
    return layers.maxpool_forward(inputs[0], window, stride)


def _pool_bwd(dout, cache, **_):
    return [layers.maxpool_backward(dout, cache)], []


def _relu_fwd(inputs, params):
    return layers.relu_forward(inputs[0])


def _relu_bwd(dout, cache, **_):
    return [layers.relu_backward(dout, cache)], []


def _l2scale_fwd(inputs, params, eps=layers.L2_EPS):
    return layers.l2scale_forward(inputs[0], params[0], eps)


def _l2scale_bwd(dout, cache, **_):
    dx, dg = layers.l2scale_backward(dout, cache)
    return [dx], [dg]


def _add_fwd(inputs, params):
    a, b = inputs
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    return a + b, None


def _add_bwd(dout, cache, **_):
    return [dout, dout], []


def _wsum_fwd(inputs, params, weights):
    shapes = {x.shape for x in inputs}
    if len(shapes) != 1:
        raise ShapeError(f"weighted sum over mismatched shapes {sorted(shapes)}")
    dt = inputs[0].dtype.type
    out = dt(weights[0]) * inputs[0]
    for w, x in zip(weights[1:], inputs[1:]):
        out = out + dt(w) * x
    return out, None


def _wsum_bwd(dout, cache, weights):
    dt = dout.dtype.type
    return [dt(w) * dout for w in weights], []


def _softmax_fwd(inputs, params):
    return layers.softmax_forward(inputs[0])


def _softmax_bwd(dout, cache, **_):
    return [layers.softmax_backward(dout, cache)], []


def _sum_fwd(inputs, params):
    return np.asarray(inputs[0].sum()), inputs[0].shape


def _sum_bwd(dout, shape, **_):
    return [np.full(shape, dout, dtype=np.result_type(dout))], []


def _dot_fwd(inputs, params, other):
    x = inputs[0]
    if x.shape != other.shape:
        raise ShapeError(f"dot of {x.shape} with constant {other.shape}")
    return np.asarray(np.sum(x * other)), None


def _dot_bwd(dout, cache, other):
    return [dout * other], []


def _wce_fwd(inputs, params, class_weights, divisor=1.0, void=255):
    from .loss import weighted_pixel_ce_forward

    return weighted_pixel_ce_forward(inputs[0], inputs[1], class_weights, divisor, void)


def _wce_bwd(dout, cache, **_):
    from .loss import weighted_pixel_ce_backward

    return [dout * weighted_pixel_ce_backward(cache), None], []


OPS = {
    "input": (_input_fwd, None),
    "conv": (_conv_fwd, _conv_bwd),
    "deconv": (_deconv_fwd, _deconv_bwd),
    "maxpool": (_pool_fwd, _pool_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "l2scale": (_l2scale_fwd, _l2scale_bwd),
    "add": (_add_fwd, _add_bwd),
    "weighted_sum": (_wsum_fwd, _wsum_bwd),
    "softmax": (_softmax_fwd, _softmax_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "dot": (_dot_fwd, _dot_bwd),
    "weighted_ce": (_wce_fwd, _wce_bwd),
}


@dataclass
class Node:
    kind: str
    inputs: tuple
    params: tuple = ()
    attrs: dict = field(default_factory=dict)
    label: str = ""
    step: int = None
    layer: int = None


class Graph:
    """Append-only DAG of operations.

    ``forward`` and ``backward`` keep the activations of the most recent
    forward pass on the graph, so a graph is used by one caller at a time.
    """

    def __init__(self):
        self.nodes = []
        self.input_names = {}
        self._values = None
        self._caches = None

    def __len__(self):
        return len(self.nodes)

    def add(self, kind, inputs=(), params=(), label="", step=None, layer=None, **attrs):
        if kind not in OPS:
            raise GraphError(f"unknown operation kind {kind!r}")
        nid = len(self.nodes)
        inputs = tuple(int(i) for i in inputs)
        for i in inputs:
            if not 0 <= i < nid:
                raise GraphError(
                    f"node {nid} ({kind}) may only read earlier nodes, got input {i}"
                )
        self.nodes.append(Node(kind, inputs, tuple(params), attrs, label or kind, step, layer))
        return nid

    def input(self, name, label=""):
        if name in self.input_names:
            raise GraphError(f"input {name!r} already declared")
        nid = self.add("input", label=label or name, name=name)
        self.input_names[name] = nid
        return nid

    def bindings(self):
        """Map parameter name -> list of node ids that use it."""
        out = {}
        for nid, node in enumerate(self.nodes):
            for p in node.params:
                out.setdefault(p, []).append(nid)
        return out

    def ancestors(self, targets):
        needed = set()
        stack = list(targets)
        while stack:
            n = stack.pop()
            if n in needed:
                continue
            needed.add(n)
            stack.extend(self.nodes[n].inputs)
        return needed

    def forward(self, inputs, params, outputs=None):
        """Evaluate the graph and return the list of node values.

        Only ancestors of ``outputs`` are evaluated when it is given; the other
        entries are None.  Each evaluated node runs exactly once, in order.
        """
        needed = self.ancestors(outputs) if outputs is not None else set(range(len(self.nodes)))
        values = [None] * len(self.nodes)
        caches = [None] * len(self.nodes)
        for nid, node in enumerate(self.nodes):
            if nid not in needed:
                continue
            if node.kind == "input":
                name = node.attrs["name"]
                if name not in inputs:
                    raise GraphError(f"missing input {name!r}")
                values[nid] = inputs[name]
                continue
            fwd = OPS[node.kind][0]
            args = [values[i] for i in node.inputs]
            try:
                pvals = [params.value(p) for p in node.params]
            except KeyError as e:
                raise GraphError(f"node {nid} ({node.label}) binds unknown parameter {e}") from None
            try:
                values[nid], caches[nid] = fwd(args, pvals, **node.attrs)
            except ShapeError as e:
                raise ShapeError(f"node {nid} ({node.label}): {e}") from None
        self._values = values
        self._caches = caches
        return values

    def backward(self, output, params, grad_output=None):
        """Back-propagate from ``output`` and accumulate parameter gradients.

        Without ``grad_output`` the output must be a scalar (a loss).  Returns
        a dict of gradients for the graph's input nodes, keyed by input name.
        Parameter gradients are *added* to ``params`` accumulators; call
        ``params.zero_grad()`` first to start from zero.
        """
        if self._values is None or self._values[output] is None:
            raise GraphError("backward called before forward")
        y = self._values[output]
        if grad_output is None:
            if np.ndim(y) != 0:
                raise GraphError(f"loss node {output} is not scalar (shape {np.shape(y)})")
            grad_output = np.ones_like(y)
        elif np.shape(grad_output) != np.shape(y):
            raise ShapeError(f"seed gradient {np.shape(grad_output)} vs output {np.shape(y)}")
        grads = {output: np.asarray(grad_output)}
        input_grads = {}
        needed = self.ancestors([output])
        for nid in range(output, -1, -1):
            if nid not in needed or nid not in grads:
                continue
            node = self.nodes[nid]
            g = grads.pop(nid)
            if node.kind == "input":
                input_grads[node.attrs["name"]] = g
                continue
            bwd = OPS[node.kind][1]
            in_grads, p_grads = bwd(g, self._caches[nid], **node.attrs)
            for i, gi in zip(node.inputs, in_grads):
                if gi is None:
                    continue
                grads[i] = grads[i] + gi if i in grads else gi
            for name, gp in zip(node.params, p_grads):
                params[name].grad += gp
        return input_grads


def finite_difference_check(graph, inputs, params, loss_node, eps=1e-5, floor=None):
    """Compare analytic gradients with central differences.

    Returns ``{parameter name: max relative error}``.  The relative error of an
    element is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` defaults to
    ``1e-6`` times the largest gradient magnitude of the parameter, so that
    entries whose gradient is pure rounding noise do not dominate.
    Requires double precision.
    """
    for name in params:
        if params.value(name).dtype != np.float64:
            raise TypeError(f"parameter {name} is not double precision")
    params.zero_grad()
    graph.forward(inputs, params, outputs=[loss_node])
    graph.backward(loss_node, params)
    report = {}
    for name in params:
        p = params[name]
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(graph.forward(inputs, params, outputs=[loss_node])[loss_node])
            flat[i] = orig - eps
            fm = float(graph.forward(inputs, params, outputs=[loss_node])[loss_node])
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        fl = floor if floor is not None else max(1e-6 * scale, 1e-12)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), fl)
        report[name] = float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))
    # leave the graph holding the unperturbed activations
    graph.forward(inputs, params, outputs=[loss_node])
    return report
