"""Architecture descriptions: the text format, shape inference and validation.

Grammar (one statement per line, ``#`` starts a comment)::

    input = C,H,W                 # required: image channels and size
    classes = K                   # required: number of output classes
    steps = T                     # unrolled time steps (default 1)
    recurrent = 3,4               # layers receiving top-layer feedback (default none)
    lambda = 0.3,0.3,1.0          # fusion weight per step (default 0.3,...,0.3,1.0)
    feedback_kernel = 1           # kernel of same-size feedback convolutions (odd)
    feedback_bias = 1             # bias on feedback transforms (1/0)
    gamma = layer                 # normalization scale: "layer" or "channel"
    gamma_sharing = separate      # "separate" or "shared" between the two branches
    gamma_init = 10
    classifier = k,s,p            # override the automatic classifier deconvolution

    conv out=64 k=3 s=1 p=1 d=1 bias=1
    deconv out=32 k=4 s=2 p=1 bias=1
    relu
    pool k=2 s=2

``conv`` and ``deconv`` lines start a new weight layer; ``relu`` and ``pool``
lines belong to the weight layer above them.  Layers are numbered from 1 in
the order they appear, and ``recurrent`` refers to those numbers.  ``out=K``
is shorthand for the number of classes.  The pixel classifier (a
deconvolution back to input resolution followed by a softmax) is attached
automatically and is not written in the file.
"""

from dataclasses import dataclass, field, replace

from .errors import ShapeError, SpecError
from .layers import ConvSpec, DeconvSpec

LAYER_KINDS = ("conv", "deconv")
POST_KINDS = ("relu", "pool")
_LAYER_DEFAULTS = {"k": 3, "s": 1, "p": 0, "d": 1, "bias": 1}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int
    kernel: int = 3
    stride: int = 1
    pad: int = 0
    dilation: int = 1
    bias: bool = True
    post: tuple = ()  # ("relu",) or ("pool", k, s) entries


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: tuple
    input_shape: tuple
    num_classes: int
    recurrent: tuple = ()
    steps: int = 1
    fusion_weights: tuple = (1.0,)
    feedback_kernel: int = 1
    feedback_bias: bool = True
    per_channel_gamma: bool = False
    shared_gamma: bool = False
    gamma_init: float = 10.0
    classifier: tuple = None

    @property
    def num_layers(self):
        return len(self.layers)

    def with_recurrence(self, recurrent=None, steps=None, fusion_weights=None):
        """Copy with a different S / T / lambda; lambda defaults as in the parser."""
        recurrent = self.recurrent if recurrent is None else tuple(sorted(set(recurrent)))
        steps = self.steps if steps is None else steps
        if fusion_weights is None:
            fusion_weights = (self.fusion_weights if steps == self.steps
                              else default_fusion_weights(steps))
        return replace(self, recurrent=recurrent, steps=steps,
                       fusion_weights=tuple(float(x) for x in fusion_weights))


def default_fusion_weights(steps):
    return tuple([0.3] * (steps - 1) + [1.0])


# -- parsing ------------------------------------------------------------------

def _ints(text, what, lineno):
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(","))
    except ValueError:
        raise SpecError(f"line {lineno}: {what} expects comma-separated integers, got {text!r}")


def _floats(text, what, lineno):
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.replace(" ", "").split(","))
    except ValueError:
        raise SpecError(f"line {lineno}: {what} expects comma-separated numbers, got {text!r}")


def _flag(text, what, lineno):
    if text.strip() in ("1", "true", "on", "yes"):
        return True
    if text.strip() in ("0", "false", "off", "no"):
        return False
    raise SpecError(f"line {lineno}: {what} expects 1 or 0, got {text!r}")


def _layer_options(tokens, allowed, lineno, num_classes):
    opts = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or key not in allowed:
            raise SpecError(f"line {lineno}: unexpected token {tok!r}")
        if key in opts:
            raise SpecError(f"line {lineno}: {key} given twice")
        if key == "out" and val == "K":
            opts[key] = num_classes
            continue
        try:
            opts[key] = int(val)
        except ValueError:
            raise SpecError(f"line {lineno}: {key} expects an integer, got {val!r}")
    return opts


def parse_spec(text):
    """Parse the architecture text format into an :class:`ArchitectureSpec`.

    Raises :class:`SpecError` for syntax problems.  Semantic checks (shapes,
    feedback feasibility) are left to :func:`validate_spec`.
    """
    directives = {}
    raw_layers = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()[0]
        if head in LAYER_KINDS or head in POST_KINDS:
            raw_layers.append((lineno, line.split()))
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key.isidentifier():
            raise SpecError(f"line {lineno}: cannot parse {line!r}")
        if key in directives:
            raise SpecError(f"line {lineno}: directive {key!r} given twice")
        directives[key] = (lineno, value)

    known = {"input", "classes", "steps", "recurrent", "lambda", "feedback_kernel",
             "feedback_bias", "gamma", "gamma_sharing", "gamma_init", "classifier"}
    for key, (lineno, _) in directives.items():
        if key not in known:
            raise SpecError(f"line {lineno}: unknown directive {key!r}")
    for req in ("input", "classes"):
        if req not in directives:
            raise SpecError(f"missing required directive {req!r}")

    def get(key, conv, default):
        if key not in directives:
            return default
        lineno, value = directives[key]
        return conv(value, key, lineno)

    input_shape = get("input", _ints, None)
    if len(input_shape) != 3:
        raise SpecError(f"line {directives['input'][0]}: input expects C,H,W")
    classes = get("classes", _ints, ())
    if len(classes) != 1:
        raise SpecError(f"line {directives['classes'][0]}: classes expects one integer")
    num_classes = classes[0]
    steps = get("steps", _ints, (1,))
    if len(steps) != 1:
        raise SpecError(f"line {directives['steps'][0]}: steps expects one integer")
    steps = steps[0]
    fusion = get("lambda", _floats, None)
    if fusion is None:
        fusion = default_fusion_weights(steps) if steps >= 1 else ()

    gamma_mode = directives.get("gamma", (0, "layer"))[1].strip()
    if gamma_mode not in ("layer", "channel"):
        raise SpecError(f"line {directives['gamma'][0]}: gamma must be 'layer' or 'channel'")
    sharing = directives.get("gamma_sharing", (0, "separate"))[1].strip()
    if sharing not in ("separate", "shared"):
        raise SpecError(
            f"line {directives['gamma_sharing'][0]}: gamma_sharing must be 'separate' or 'shared'")
    gamma_init = get("gamma_init", _floats, (10.0,))
    fk = get("feedback_kernel", _ints, (1,))
    classifier = get("classifier", _ints, None)
    if classifier is not None and len(classifier) != 3:
        raise SpecError(f"line {directives['classifier'][0]}: classifier expects k,s,p")

    layers = []
    for lineno, tokens in raw_layers:
        kind, rest = tokens[0], tokens[1:]
        if kind in LAYER_KINDS:
            allowed = {"out", "k", "s", "p", "bias"} | ({"d"} if kind == "conv" else set())
            opts = _layer_options(rest, allowed, lineno, num_classes)
            if "out" not in opts:
                raise SpecError(f"line {lineno}: {kind} needs out=")
            o = dict(_LAYER_DEFAULTS, **opts)
            layers.append(LayerSpec(kind, o["out"], o["k"], o["s"], o["p"], o["d"],
                                    bool(o["bias"]), ()))
            continue
        if not layers:
            raise SpecError(f"line {lineno}: {kind} before the first conv/deconv layer")
        if kind == "relu":
            if rest:
                raise SpecError(f"line {lineno}: relu takes no options")
            post = ("relu",)
        else:
            opts = _layer_options(rest, {"k", "s"}, lineno, num_classes)
            k = opts.get("k", 2)
            post = ("pool", k, opts.get("s", k))
        layers[-1] = replace(layers[-1], post=layers[-1].post + (post,))

    return ArchitectureSpec(
        layers=tuple(layers),
        input_shape=input_shape,
        num_classes=num_classes,
        recurrent=tuple(sorted(set(get("recurrent", _ints, ())))),
        steps=steps,
        fusion_weights=fusion,
        feedback_kernel=fk[0] if fk else 1,
        feedback_bias=get("feedback_bias", _flag, True),
        per_channel_gamma=gamma_mode == "channel",
        shared_gamma=sharing == "shared",
        gamma_init=gamma_init[0] if gamma_init else 10.0,
        classifier=classifier,
    )


def format_spec(spec):
    """Canonical text for ``spec``; ``parse_spec(format_spec(s)) == s``."""
    lines = [
        f"input = {','.join(str(v) for v in spec.input_shape)}",
        f"classes = {spec.num_classes}",
        f"steps = {spec.steps}",
        f"recurrent = {','.join(str(v) for v in spec.recurrent)}",
        f"lambda = {','.join(repr(float(v)) for v in spec.fusion_weights)}",
        f"feedback_kernel = {spec.feedback_kernel}",
        f"feedback_bias = {int(spec.feedback_bias)}",
        f"gamma = {'channel' if spec.per_channel_gamma else 'layer'}",
        f"gamma_sharing = {'shared' if spec.shared_gamma else 'separate'}",
        f"gamma_init = {float(spec.gamma_init)!r}",
    ]
    if spec.classifier is not None:
        lines.append(f"classifier = {','.join(str(v) for v in spec.classifier)}")
    for layer in spec.layers:
        opts = f"out={layer.out} k={layer.kernel} s={layer.stride} p={layer.pad}"
        if layer.kind == "conv":
            opts += f" d={layer.dilation}"
        lines.append(f"{layer.kind} {opts} bias={int(layer.bias)}")
        for post in layer.post:
            lines.append("relu" if post[0] == "relu" else f"pool k={post[1]} s={post[2]}")
    return "\n".join(lines) + "\n"


# -- shape inference and validation ------------------------------------------

@dataclass(frozen=True)
class LayerGeometry:
    op: object            # ConvSpec or DeconvSpec of the weight layer W
    merge_shape: tuple    # (C, H, W) right after W, where feedback is summed in
    out_shape: tuple      # (C, H, W) after the layer's activation / pooling


@dataclass(frozen=True)
class FeedbackPlan:
    layer: int
    kind: str             # "conv" (equal size) or "deconv" (larger target)
    op: object


@dataclass
class ValidatedSpec:
    spec: ArchitectureSpec
    geometry: list
    feedback: dict        # layer -> FeedbackPlan
    classifier: DeconvSpec
    warnings: list = field(default_factory=list)

    @property
    def top_shape(self):
        return self.geometry[-1].out_shape


def _resize_op(in_ch, out_ch, src_hw, dst_hw, what):
    """Transposed convolution mapping ``src_hw`` onto ``dst_hw`` by an integer factor."""
    (sh, sw), (dh, dw) = src_hw, dst_hw
    if dh % sh or dw % sw or dh // sh != dw // sw:
        raise ShapeError(f"{what}: no integer resize factor maps {sh}x{sw} to {dh}x{dw}")
    r = dh // sh
    if r == 1:
        return DeconvSpec(in_ch, out_ch, 1, 1, 0)
    if r % 2 == 0:
        return DeconvSpec(in_ch, out_ch, 2 * r, r, r // 2)
    return DeconvSpec(in_ch, out_ch, r, r, 0)


def infer_geometry(spec):
    geometry = []
    c, h, w = spec.input_shape
    for idx, layer in enumerate(spec.layers, 1):
        if layer.kind == "conv":
            op = ConvSpec(c, layer.out, layer.kernel, layer.stride, layer.pad, layer.dilation)
        else:
            op = DeconvSpec(c, layer.out, layer.kernel, layer.stride, layer.pad)
        try:
            h, w = op.output_hw(h, w)
        except ShapeError as e:
            raise ShapeError(f"layer {idx}: {e}") from None
        c = layer.out
        merge = (c, h, w)
        for post in layer.post:
            if post[0] == "pool":
                _, k, s = post
                h2, w2 = (h - k) // s + 1, (w - k) // s + 1
                if k < 1 or s < 1 or h2 < 1 or w2 < 1:
                    raise ShapeError(f"layer {idx}: pool k={k} s={s} does not fit {h}x{w}")
                h, w = h2, w2
        geometry.append(LayerGeometry(op, merge, (c, h, w)))
    return geometry


def feedback_plan(spec, geometry, layer):
    top_c, top_h, top_w = geometry[-1].out_shape
    c, h, w = geometry[layer - 1].merge_shape
    if h < top_h or w < top_w:
        raise ShapeError(
            f"feedback to layer {layer}: target {h}x{w} is smaller than the top output "
            f"{top_h}x{top_w}; downsampling feedback is not defined")
    if (h, w) == (top_h, top_w):
        k = spec.feedback_kernel
        if k < 1 or k % 2 == 0:
            raise ShapeError(f"feedback_kernel must be odd and >= 1, got {k}")
        return FeedbackPlan(layer, "conv", ConvSpec(top_c, c, k, 1, k // 2, 1))
    op = _resize_op(top_c, c, (top_h, top_w), (h, w), f"feedback to layer {layer}")
    return FeedbackPlan(layer, "deconv", op)


def classifier_op(spec, top_shape):
    c, h, w = top_shape
    _, ih, iw = spec.input_shape
    if spec.classifier is not None:
        k, s, p = spec.classifier
        op = DeconvSpec(c, spec.num_classes, k, s, p)
        if op.output_hw(h, w) != (ih, iw):
            raise ShapeError(f"classifier k={k} s={s} p={p} maps {h}x{w} to "
                             f"{op.output_hw(h, w)}, not the input size {ih}x{iw}")
        return op
    return _resize_op(c, spec.num_classes, (h, w), (ih, iw), "classifier")


def _adjacent_runs(indices):
    runs, run = [], []
    for i in sorted(indices):
        if run and i == run[-1] + 1:
            run.append(i)
        else:
            if run:
                runs.append(run)
            run = [i]
    if run:
        runs.append(run)
    return runs


def validate_spec(spec):
    """Check ``spec`` and return a :class:`ValidatedSpec`.

    All hard problems are collected into a single :class:`SpecError`.
    Violations of the layer-selection rules of thumb (feeding back into the
    first layer, or into long runs of neighbouring layers) only produce
    warnings.
    """
    errors, warnings = [], []
    L = spec.num_layers
    if L == 0:
        errors.append("no layers defined")
    if spec.steps < 1:
        errors.append(f"steps must be >= 1, got {spec.steps}")
    if not spec.fusion_weights:
        errors.append("fusion weights (lambda) are empty")
    elif len(spec.fusion_weights) != spec.steps:
        errors.append(f"{len(spec.fusion_weights)} fusion weights for {spec.steps} steps")
    elif spec.fusion_weights[-1] <= 0:
        errors.append("the last fusion weight must be positive")
    if spec.num_classes < 1:
        errors.append(f"classes must be >= 1, got {spec.num_classes}")
    if len(spec.input_shape) != 3 or min(spec.input_shape) < 1:
        errors.append(f"input must be three positive integers, got {spec.input_shape}")
    outside = [r for r in spec.recurrent if not 1 <= r <= L]
    if outside:
        errors.append(f"recurrent layers {outside} outside 1..{L}")
    if errors:
        raise SpecError(errors)

    try:
        geometry = infer_geometry(spec)
    except ShapeError as e:
        raise SpecError(str(e)) from None
    feedback = {}
    for r in spec.recurrent:
        try:
            feedback[r] = feedback_plan(spec, geometry, r)
        except ShapeError as e:
            errors.append(str(e))
    try:
        cls = classifier_op(spec, geometry[-1].out_shape)
    except ShapeError as e:
        errors.append(str(e))
    if errors:
        raise SpecError(errors)

    if 1 in spec.recurrent:
        warnings.append("layer 1 receives feedback; bottom layers learn simple patterns "
                        "where global context rarely helps")
    for run in _adjacent_runs(spec.recurrent):
        if len(run) >= 3:
            warnings.append(f"layers {run[0]}..{run[-1]} are all recurrent; neighbouring "
                            "layers carry redundant information")
    if spec.recurrent and spec.steps == 1:
        warnings.append("recurrent layers are unused with steps = 1")
    return ValidatedSpec(spec, geometry, feedback, cls, warnings)
