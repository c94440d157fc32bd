"""Receptive fields of unrolled models, and graph export.

Theoretical receptive fields follow the composition law: a (k, s, d) layer
maps ``(size, jump)`` to ``(size + d (k - 1) jump, jump s)``.  Where a layer
sums a forward and a feedback branch, the result covers the union of both.
Empirical receptive fields are the support of the input gradient of a single
unit.
"""

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .archspec import validate_spec

GRAD_EPS = 1e-12


@dataclass(frozen=True)
class RFRect:
    height: int
    width: int
    top: int = None
    left: int = None

    def contains(self, other):
        if None in (self.top, self.left, other.top, other.left):
            return self.height >= other.height and self.width >= other.width
        return (self.top <= other.top and self.left <= other.left
                and other.top + other.height <= self.top + self.height
                and other.left + other.width <= self.left + self.width)


@dataclass(frozen=True)
class _Span:
    """Input interval of unit i: [start + i * jump, start + i * jump + size - 1]."""
    start: Fraction
    size: Fraction
    jump: Fraction

    def conv(self, k, s, p, d=1):
        return _Span(self.start - p * self.jump, self.size + d * (k - 1) * self.jump, self.jump * s)

    def deconv(self, k, s, p):
        # output o reads inputs i with (o + p - k + 1) / s <= i <= (o + p) / s
        j = self.jump / s
        return _Span(self.start + (p - k + 1) * j, self.size + Fraction(k - 1, s) * self.jump, j)

    def union(self, other):
        start = min(self.start, other.start)
        end = max(self.start + self.size, other.start + other.size)
        return _Span(start, end - start, self.jump)


_UNIT = (_Span(Fraction(0), Fraction(1), Fraction(1)),) * 2


def _apply_op(spans, op):
    kh, kw = op.kernel
    if hasattr(op, "dilation"):
        return (spans[0].conv(kh, op.stride, op.padding, op.dilation),
                spans[1].conv(kw, op.stride, op.padding, op.dilation))
    return spans[0].deconv(kh, op.stride, op.padding), spans[1].deconv(kw, op.stride, op.padding)


def _layer_spans(spec, layer, step, validated=None):
    v = validated or validate_spec(spec)
    L = spec.num_layers
    if not 0 <= layer <= L:
        raise ValueError(f"layer {layer} outside 0..{L}")
    if not 1 <= step <= spec.steps:
        raise ValueError(f"step {step} outside 1..{spec.steps}")
    memo = {}

    def out(ell, t):
        if ell == 0:
            return _UNIT
        if (ell, t) in memo:
            return memo[(ell, t)]
        spans = _apply_op(out(ell - 1, t), v.geometry[ell - 1].op)
        if ell in v.feedback and t >= 2:
            fb = _apply_op(out(L, t - 1), v.feedback[ell].op)
            spans = (spans[0].union(fb[0]), spans[1].union(fb[1]))
        for post in spec.layers[ell - 1].post:
            if post[0] == "pool":
                spans = tuple(s.conv(post[1], post[2], 0) for s in spans)
        memo[(ell, t)] = spans
        return spans

    return out(layer, step)


def theoretical_rf(spec, layer, step, position=None):
    """Composition-law receptive field of ``X_layer(step)``.

    Layer 0 is the input image.  With ``position=(row, col)`` the rectangle is
    also placed in input coordinates (unclipped).
    """
    sh, sw = _layer_spans(spec, layer, step)
    h, w = math.ceil(sh.size), math.ceil(sw.size)
    if position is None:
        return RFRect(h, w)
    r, c = position
    return RFRect(h, w, math.floor(sh.start + r * sh.jump), math.floor(sw.start + c * sw.jump))


def positive_init(model, seed=0, low=0.05, high=1.0):
    """Reinitialize every weight and bias with positive uniform values."""
    rng = np.random.default_rng(seed)
    for name in model.params:
        p = model.params[name]
        if name.startswith("gamma"):
            continue
        p.value = rng.uniform(low, high, p.value.shape).astype(p.value.dtype)
        if not name.endswith(".bias"):
            p.value = p.value / p.value[0].size
    return model


def _unit_node(model, layer, step):
    return model.input_node if layer == 0 else model.layer_nodes[(layer, step)]


def empirical_rf(model, layer, step, position=None, channel=0, image=None, seed=0):
    """Bounding box of input pixels with a nonzero gradient for one unit.

    The unit is ``channel`` at ``position`` (default: the centre) of
    ``X_layer(step)`` for the first image of the batch.  A random positive
    image is used unless ``image`` is given.
    """
    spec = model.spec
    c, H, W = spec.input_shape
    if image is None:
        image = np.random.default_rng(seed).uniform(0.1, 1.0, (1, c, H, W))
    image = np.asarray(image, dtype=model.dtype)
    if layer == 0:
        r, col = position or (H // 2, W // 2)
        return RFRect(1, 1, r, col)
    node = _unit_node(model, layer, step)
    vals = model.graph.forward({"image": image}, model.params, outputs=[node])
    out = vals[node]
    r, col = position or (out.shape[2] // 2, out.shape[3] // 2)
    seed_grad = np.zeros_like(out)
    seed_grad[0, channel, r, col] = 1.0
    grads = model.graph.backward(node, model.params, grad_output=seed_grad)
    model.params.zero_grad()
    g = grads.get("image")
    support = np.abs(g[0]).max(axis=0) > GRAD_EPS if g is not None else np.zeros((H, W), bool)
    if not support.any():
        return RFRect(0, 0, r, col)
    rows = np.flatnonzero(support.any(axis=1))
    cols = np.flatnonzero(support.any(axis=0))
    return RFRect(int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1), int(rows[0]), int(cols[0]))


def rf_table(spec):
    """Theoretical receptive field for every (layer, step)."""
    return [(ell, t, theoretical_rf(spec, ell, t))
            for t in range(1, spec.steps + 1) for ell in range(1, spec.num_layers + 1)]


def write_rf_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "step", "rf_h", "rf_w"])
        for ell, t, rect in rows:
            w.writerow([ell, t, rect.height, rect.width])


# -- graph export ---------------------------------------------------------------

def _quote(s):
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dot(model, name="mpf"):
    """Graphviz DOT text for the model graph.

    Parameters bound to more than one node are listed under ``shared``.
    Edges between nodes of different time steps are marked ``cross_step``.
    """
    g = model.graph
    bindings = g.bindings()
    lines = [f"digraph {name} {{", "  rankdir=TB;"]
    for nid, node in enumerate(g.nodes):
        attrs = [f"label={_quote(node.label)}", f"kind={_quote(node.kind)}"]
        if node.step is not None:
            attrs.append(f"step={node.step}")
        own = [p for p in node.params if len(bindings[p]) == 1]
        shared = [p for p in node.params if len(bindings[p]) > 1]
        if own:
            attrs.append(f"params={_quote(','.join(own))}")
        if shared:
            attrs.append(f"shared={_quote(','.join(shared))}")
        lines.append(f"  n{nid} [{', '.join(attrs)}];")
    for nid, node in enumerate(g.nodes):
        for src in node.inputs:
            s = g.nodes[src].step
            cross = s is not None and node.step is not None and s != node.step
            extra = " [cross_step=true, style=dashed]" if cross else ""
            lines.append(f"  n{src} -> n{nid}{extra};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def cross_step_edges(model):
    g = model.graph
    out = []
    for nid, node in enumerate(g.nodes):
        for src in node.inputs:
            s = g.nodes[src].step
            if s is not None and node.step is not None and s != node.step:
                out.append((src, nid))
    return out


def export_graph(model, path):
    text = graph_to_dot(model)
    with open(path, "w") as fh:
        fh.write(text)
    return text

