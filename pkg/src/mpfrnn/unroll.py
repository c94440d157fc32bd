"""Unrolling an architecture into the multi-path feedback graph.

For steps ``t = 1..T`` the whole layer stack is instantiated again, reusing
the layer weights ``W{l}``.  At step 1 every layer is the plain
``f(W x)``.  From step 2 on, each layer ``l`` in the recurrent set sums two
normalized branches before its activation::

    f( g_fwd(W{l} x_{l-1}(t)) + g_fb(U{l}(t) x_top(t-1)) )

where ``U{l}(t)`` is a per-step feedback transform: a convolution when the
target has the top layer's spatial size, a transposed convolution when it is
larger.  The top-layer outputs of all steps are fused with fixed weights and
passed to a deconvolution + softmax pixel classifier.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .archspec import validate_spec
from .autograd import Graph, ParameterStore
from .layers import ConvSpec
from .tensor import dtype_for


def w_name(layer):
    return f"W{layer}"


def u_name(layer, step):
    return f"U{layer}({step})"


def gamma_names(spec, layer):
    if spec.shared_gamma:
        return f"gamma{layer}", f"gamma{layer}"
    return f"gamma{layer}.fwd", f"gamma{layer}.fb"


CLASSIFIER = "cls"


@dataclass
class UnrolledModel:
    spec: object
    validated: object
    graph: Graph
    params: ParameterStore
    input_node: int
    top_nodes: list
    layer_nodes: dict = field(default_factory=dict)     # (layer, step) -> output of f
    merge_nodes: dict = field(default_factory=dict)     # (layer, step) -> summed pre-activation
    feedback_nodes: dict = field(default_factory=dict)  # (layer, step) -> U x_top(t-1)
    fused: int = None
    logits: int = None
    output: int = None
    loss_node: int = None

    @property
    def dtype(self):
        return next(iter(self.params.entries.values())).value.dtype

    def predict(self, images):
        """Class probabilities, shape (N, K, H, W)."""
        images = np.asarray(images, dtype=self.dtype)
        return self.graph.forward({"image": images}, self.params, outputs=[self.output])[self.output]

    def loss_and_grads(self, images, labels):
        """Forward + backward through the loss; gradients start from zero."""
        if self.loss_node is None:
            raise ValueError("no loss attached; call add_loss first")
        self.params.zero_grad()
        vals = self.graph.forward({"image": np.asarray(images, dtype=self.dtype),
                                   "labels": np.asarray(labels)},
                                  self.params, outputs=[self.loss_node])
        self.graph.backward(self.loss_node, self.params)
        return float(vals[self.loss_node]), vals[self.output]


# -- parameter initialization -------------------------------------------------

def _param_rng(seed, name):
    # per-name streams keep a parameter's initial value independent of which
    # other parameters exist, so ablation variants start from the same W
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


def _init_weight(op, seed, name, dtype):
    if isinstance(op, ConvSpec):
        fan_in = op.in_channels * op.kernel[0] * op.kernel[1]
    else:
        fan_in = max(1.0, op.in_channels * op.kernel[0] * op.kernel[1] / op.stride ** 2)
    bound = np.sqrt(6.0 / fan_in)
    return _param_rng(seed, name).uniform(-bound, bound, op.weight_shape).astype(dtype)


def _bias_shape(op):
    return (1, op.out_channels, 1, 1)


class _Builder:
    def __init__(self, spec, seed, precision):
        self.spec = spec
        self.seed = seed
        self.dtype = dtype_for(precision)
        self.graph = Graph()
        self.params = ParameterStore()

    def weight(self, name, op, bias):
        if name not in self.params:
            self.params.add(name, _init_weight(op, self.seed, name, self.dtype))
            if bias:
                self.params.add(name + ".bias", np.zeros(_bias_shape(op), self.dtype))
        return (name, name + ".bias") if bias else (name,)

    def gamma(self, name, channels):
        if name not in self.params:
            shape = (1, channels if self.spec.per_channel_gamma else 1, 1, 1)
            self.params.add(name, np.full(shape, self.spec.gamma_init, self.dtype))
        return (name,)

    def linear(self, op, x, pnames, label, step=None, layer=None):
        if isinstance(op, ConvSpec):
            return self.graph.add("conv", [x], pnames, label, step, layer,
                                  stride=op.stride, pad=op.padding, dilation=op.dilation)
        return self.graph.add("deconv", [x], pnames, label, step, layer,
                              stride=op.stride, pad=op.padding)

    def post(self, layer_spec, x, step, layer):
        for post in layer_spec.post:
            if post[0] == "relu":
                x = self.graph.add("relu", [x], (), f"relu{layer}", step, layer)
            else:
                x = self.graph.add("maxpool", [x], (), f"pool{layer}", step, layer,
                                   window=post[1], stride=post[2])
        return x

    def finish_bindings(self):
        for name, users in self.graph.bindings().items():
            self.params[name].shared = len(users) > 1


def unroll(spec, seed=0, precision="double"):
    """Build the unrolled graph up to the per-step top-layer outputs."""
    v = validate_spec(spec)
    b = _Builder(spec, seed, precision)
    g = b.graph
    x_in = g.input("image")
    model = UnrolledModel(spec, v, g, b.params, x_in, [])
    S = set(spec.recurrent)
    prev_top = None
    for t in range(1, spec.steps + 1):
        h = x_in
        for ell, (layer, geo) in enumerate(zip(spec.layers, v.geometry), 1):
            pw = b.weight(w_name(ell), geo.op, layer.bias)
            lin = b.linear(geo.op, h, pw, f"W{ell}@t{t}", t, ell)
            if ell in S and t >= 2:
                plan = v.feedback[ell]
                pu = b.weight(u_name(ell, t), plan.op, spec.feedback_bias)
                fb = b.linear(plan.op, prev_top, pu, f"U{ell}({t})", t, ell)
                gf, gb = gamma_names(spec, ell)
                channels = geo.merge_shape[0]
                a = g.add("l2scale", [lin], b.gamma(gf, channels), f"g{ell}.fwd@t{t}", t, ell)
                c = g.add("l2scale", [fb], b.gamma(gb, channels), f"g{ell}.fb@t{t}", t, ell)
                lin = g.add("add", [a, c], (), f"merge{ell}@t{t}", t, ell)
                model.feedback_nodes[(ell, t)] = fb
            model.merge_nodes[(ell, t)] = lin
            h = b.post(layer, lin, t, ell)
            model.layer_nodes[(ell, t)] = h
        model.top_nodes.append(h)
        prev_top = h
    model._builder = b
    return model


def fuse_outputs(model, fusion_weights=None):
    """Add the node ``O = sum_t lambda_t X_top(t)``.

    A single step with weight 1 is the identity, and no node is added, so a
    one-step model is node-for-node the plain feedforward network.
    """
    lam = tuple(float(x) for x in (fusion_weights or model.spec.fusion_weights))
    if len(lam) != len(model.top_nodes):
        raise ValueError(f"{len(lam)} fusion weights for {len(model.top_nodes)} steps")
    if lam == (1.0,):
        model.fused = model.top_nodes[0]
    else:
        model.fused = model.graph.add("weighted_sum", model.top_nodes, (), "fuse", weights=lam)
    return model.fused


def attach_classifier(model):
    """Deconvolve ``O`` to K channels at input resolution, then softmax."""
    b = model._builder
    op = model.validated.classifier
    p = b.weight(CLASSIFIER, op, True)
    model.logits = b.linear(op, model.fused, p, "classifier")
    model.output = model.graph.add("softmax", [model.logits], (), "softmax")
    b.finish_bindings()
    return model.output


def add_loss(model, class_weights, divisor=1.0, void=255):
    g = model.graph
    labels = g.input("labels")
    model.loss_node = g.add("weighted_ce", [model.output, labels], (), "loss",
                            class_weights=np.asarray(class_weights, dtype=np.float64),
                            divisor=float(divisor), void=void)
    return model.loss_node


def build_model(spec, seed=0, precision="double", fusion_weights=None):
    model = unroll(spec, seed, precision)
    fuse_outputs(model, fusion_weights)
    attach_classifier(model)
    return model


def build_feedforward(spec, seed=0, precision="double"):
    """The plain network ``X_l = f(W_l X_{l-1})`` with the same classifier.

    Built directly, without the unroller, as the reference for the one-step
    equivalence.  Parameter names and initial values match :func:`unroll`.
    """
    v = validate_spec(spec)
    b = _Builder(spec, seed, precision)
    g = b.graph
    h = x_in = g.input("image")
    model = UnrolledModel(spec, v, g, b.params, x_in, [])
    for ell, (layer, geo) in enumerate(zip(spec.layers, v.geometry), 1):
        lin = b.linear(geo.op, h, b.weight(w_name(ell), geo.op, layer.bias), f"W{ell}@t1", 1, ell)
        model.merge_nodes[(ell, 1)] = lin
        h = b.post(layer, lin, 1, ell)
        model.layer_nodes[(ell, 1)] = h
    model.top_nodes.append(h)
    model.fused = h
    model._builder = b
    attach_classifier(model)
    return model


def parameter_count(spec):
    """Number of scalar parameters of the unrolled model, from shapes alone."""
    v = validate_spec(spec)

    def size(op, bias):
        n = int(np.prod(op.weight_shape))
        return n + (op.out_channels if bias else 0)

    total = sum(size(geo.op, layer.bias) for layer, geo in zip(spec.layers, v.geometry))
    total += size(v.classifier, True)
    if spec.steps >= 2:
        for ell in spec.recurrent:
            total += (spec.steps - 1) * size(v.feedback[ell].op, spec.feedback_bias)
            g = v.geometry[ell - 1].merge_shape[0] if spec.per_channel_gamma else 1
            total += g * (1 if spec.shared_gamma else 2)
    return total
