"""Network graphs: shape inference, parameters, forward and backward.

A network is an ordered list of layer specs. Layer i consumes the output of
layer i - 1 (layer 0 consumes the batch); residual-add layers additionally
read the cached output of an earlier layer, which is how skip connections
are expressed without a general graph structure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .layers import LayerError, LayerSpec

OUTPUT_KINDS = ("image", "pixel")  # per-image logits vs per-pixel logit maps


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    in_channels: int
    output: str  # one of OUTPUT_KINDS
    input_hw: tuple[int, int] | None = None  # fixed input size; None = any (fully conv)

    def __post_init__(self):
        if self.output not in OUTPUT_KINDS:
            raise ValueError(f"output must be one of {OUTPUT_KINDS}, got {self.output!r}")
        if not self.layers:
            raise ValueError("network needs at least one layer")

    def fingerprint(self) -> tuple:
        return (self.in_channels, self.output, self.input_hw, self.layers)


def infer_shapes(net: NetworkSpec, h: int, w: int) -> list[tuple[int, int, int]]:
    """Predicted (c, h, w) after every layer for an input of (in_channels, h, w).

    Raises LayerError naming the first inconsistent layer.
    """
    shapes: list[tuple[int, int, int]] = []
    c, ch, cw = net.in_channels, h, w
    for i, spec in enumerate(net.layers):
        if isinstance(spec, L.Conv):
            kh, kw = spec.kernel
            if ch + 2 * spec.pad < kh or cw + 2 * spec.pad < kw:
                raise LayerError(i, spec.kind, f"kernel {spec.kernel} exceeds input {ch}x{cw}")
            ch, cw = L.conv_out_hw(ch, cw, spec)
            c = spec.out_channels
        elif isinstance(spec, (L.BatchNorm, L.Relu)):
            pass
        elif isinstance(spec, L.MaxPool):
            if ch < spec.window or cw < spec.window:
                raise LayerError(i, spec.kind, f"window {spec.window} exceeds input {ch}x{cw}")
            ch, cw = L.pool_out_hw(ch, cw, spec.window, spec.stride)
        elif isinstance(spec, L.AvgPool):
            if spec.window and (ch < spec.window or cw < spec.window):
                raise LayerError(i, spec.kind, f"window {spec.window} exceeds input {ch}x{cw}")
            ch, cw = L.pool_out_hw(ch, cw, spec.window, spec.stride)
        elif isinstance(spec, L.Dense):
            c, ch, cw = spec.out_features, 1, 1
        elif isinstance(spec, L.UpsampleBilinear):
            if spec.match_input:
                ch, cw = h, w
            else:
                ch, cw = ch * spec.scale, cw * spec.scale
        elif isinstance(spec, L.ResidualAdd):
            if not 0 <= spec.source < i:
                raise LayerError(i, spec.kind, f"skip source {spec.source} is not an earlier layer")
            if shapes[spec.source] != (c, ch, cw):
                raise LayerError(
                    i,
                    spec.kind,
                    f"skip source shape {shapes[spec.source]} != incoming {(c, ch, cw)}",
                )
        else:  # pragma: no cover - catalogue is closed
            raise LayerError(i, getattr(spec, "kind", "?"), "unknown layer kind")
        if ch < 1 or cw < 1:
            raise LayerError(i, spec.kind, f"collapsed to empty spatial extent {ch}x{cw}")
        shapes.append((c, ch, cw))
    return shapes


# ---------------------------------------------------------------- parameters

LEARNABLE = ("w", "b", "gamma", "beta")


@dataclass
class Parameters:
    """Named parameter tensors, keyed 'layer<i>.<name>'.

    Running batch-norm statistics live here too but are excluded from
    gradients and optimizer updates.
    """

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def learnable_keys(self) -> list[str]:
        return [k for k in self.tensors if k.rsplit(".", 1)[1] in LEARNABLE]

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return sum(self.tensors[k].size for k in self.learnable_keys())

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def __setitem__(self, key: str, value: np.ndarray):
        self.tensors[key] = value


def _key(i: int, name: str) -> str:
    return f"layer{i:03d}.{name}"


def init_parameters(net: NetworkSpec, rng: np.random.Generator) -> Parameters:
    """He fan-in initialization for conv/dense weights; zero biases; unit bn scale."""
    params = Parameters()
    if any(isinstance(s, L.Dense) for s in net.layers) and net.input_hw is None:
        raise ValueError("dense layers need a fixed input_hw to size their weights")
    h, w = net.input_hw if net.input_hw else (32, 32)  # nominal size; conv shapes don't depend on it
    shapes = infer_shapes(net, h, w)
    c_in = net.in_channels
    for i, spec in enumerate(net.layers):
        if isinstance(spec, L.Conv):
            kh, kw = spec.kernel
            fan_in = c_in * kh * kw
            params[_key(i, "w")] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(spec.out_channels, c_in, kh, kw)
            )
            params[_key(i, "b")] = np.zeros(spec.out_channels)
        elif isinstance(spec, L.BatchNorm):
            params[_key(i, "gamma")] = np.ones(c_in)
            params[_key(i, "beta")] = np.zeros(c_in)
            params[_key(i, "running_mean")] = np.zeros(c_in)
            params[_key(i, "running_var")] = np.ones(c_in)
        elif isinstance(spec, L.Dense):
            cc, hh, ww = shapes[i - 1] if i else (c_in, h, w)
            fan_in = cc * hh * ww
            params[_key(i, "w")] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(spec.out_features, fan_in)
            )
            params[_key(i, "b")] = np.zeros(spec.out_features)
        c_in = shapes[i][0]
    return params


def zero_gradients(params: Parameters) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(params[k]) for k in params.learnable_keys()}


# ---------------------------------------------------------------- forward / backward

@dataclass
class ForwardCache:
    fingerprint: tuple
    mode: str
    batch: np.ndarray
    outputs: list[np.ndarray]
    aux: list
    new_running: dict[str, np.ndarray]


def _check_finite(out: np.ndarray, i: int, kind: str):
    s = float(out.sum())
    if not np.isfinite(s):
        raise LayerError(i, kind, "non-finite activation")


def forward(
    net: NetworkSpec,
    params: Parameters,
    batch: np.ndarray,
    mode: str = "eval",
    update_running: bool = True,
    scratch: dict | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network. Returns (output, cache).

    Train mode normalizes with batch statistics and (unless suppressed)
    stores refreshed running statistics into `params` after the pass; eval
    mode uses the stored running statistics and touches nothing.

    `scratch` is an optional dict a training loop carries across steps; conv
    patch buffers persist in it, which skips their re-gather in backward and
    their reallocation on every step. Pass the same dict to every call that
    uses the same batch geometry.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if batch.ndim != 4 or batch.shape[1] != net.in_channels:
        raise LayerError(
            0, "input", f"batch shape {batch.shape} incompatible with {net.in_channels} input channels"
        )
    if net.input_hw and tuple(batch.shape[2:]) != net.input_hw:
        raise LayerError(0, "input", f"network expects {net.input_hw} input, got {batch.shape[2:]}")
    _check_finite(batch, -1, "input")
    n, _, h, w = batch.shape
    shapes = infer_shapes(net, h, w)
    train = mode == "train"
    x = batch.astype(np.float64, copy=False)
    outputs: list[np.ndarray] = []
    aux: list = []
    new_running: dict[str, np.ndarray] = {}
    use_scratch = scratch is not None
    for i, spec in enumerate(net.layers):
        if isinstance(spec, L.Conv):
            x, a = L.conv_forward(
                spec, x, params[_key(i, "w")], params[_key(i, "b")],
                cols_out=scratch.get(i) if use_scratch else None,
                keep_cols=use_scratch,
            )
            if use_scratch and a is not None:
                prev = scratch.get(i)
                if prev is None or a.size > prev.size:
                    scratch[i] = a
            if not train:
                a = None  # backward never sees this cache; drop the reference
        elif isinstance(spec, L.BatchNorm):
            x, a = L.batchnorm_forward(
                x,
                params[_key(i, "gamma")],
                params[_key(i, "beta")],
                params[_key(i, "running_mean")],
                params[_key(i, "running_var")],
                train,
            )
            if train:
                batch_mean, batch_var = a[0], a[1]
                new_mean, new_var = L.batchnorm_running_update(
                    batch_mean, batch_var, params[_key(i, "running_mean")], params[_key(i, "running_var")]
                )
                new_running[_key(i, "running_mean")] = new_mean
                new_running[_key(i, "running_var")] = new_var
        elif isinstance(spec, L.Relu):
            x, a = L.relu_forward(x)
        elif isinstance(spec, L.MaxPool):
            x, a = L.maxpool_forward(spec, x)
        elif isinstance(spec, L.AvgPool):
            x, a = L.avgpool_forward(spec, x)
        elif isinstance(spec, L.Dense):
            x, a = L.dense_forward(x, params[_key(i, "w")], params[_key(i, "b")])
        elif isinstance(spec, L.UpsampleBilinear):
            _, oh, ow = shapes[i]
            x, a = L.upsample_forward(x, oh, ow)
        elif isinstance(spec, L.ResidualAdd):
            x, a = x + outputs[spec.source], None
        if x.shape[1:] != shapes[i]:
            raise LayerError(i, spec.kind, f"output {x.shape[1:]} != inferred {shapes[i]}")
        _check_finite(x, i, spec.kind)
        outputs.append(x)
        aux.append(a)
    if train and update_running:
        for k, v in new_running.items():
            params[k] = v
    cache = ForwardCache(net.fingerprint(), mode, batch, outputs, aux, new_running)
    return outputs[-1], cache


def backward(
    net: NetworkSpec,
    params: Parameters,
    cache: ForwardCache,
    dout: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss wrt every learnable tensor.

    `dout` is the loss gradient wrt the network output; the cache must come
    from a train-mode forward on the same network and parameters.
    """
    if cache.fingerprint != net.fingerprint():
        raise ValueError("cache was produced by a different network")
    if cache.mode != "train":
        raise ValueError("backward needs a train-mode cache")
    if dout.shape != cache.outputs[-1].shape:
        raise ValueError(f"dout shape {dout.shape} != output shape {cache.outputs[-1].shape}")
    grads = zero_gradients(params)
    pending: list[np.ndarray | None] = [None] * len(net.layers)
    pending[-1] = dout
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        g = pending[i]
        pending[i] = None  # free as we go
        if g is None:
            continue
        x = cache.outputs[i - 1] if i else cache.batch
        if isinstance(spec, L.Conv):
            dx, dw, db = L.conv_backward(spec, x, params[_key(i, "w")], g, cols=cache.aux[i], need_dx=i > 0)
            grads[_key(i, "w")] += dw
            grads[_key(i, "b")] += db
        elif isinstance(spec, L.BatchNorm):
            dx, dgamma, dbeta = L.batchnorm_backward(params[_key(i, "gamma")], cache.aux[i], g)
            grads[_key(i, "gamma")] += dgamma
            grads[_key(i, "beta")] += dbeta
        elif isinstance(spec, L.Relu):
            dx = L.relu_backward(cache.outputs[i], g)
        elif isinstance(spec, L.MaxPool):
            dx = L.maxpool_backward(spec, x.shape, cache.aux[i], g)
        elif isinstance(spec, L.AvgPool):
            dx = L.avgpool_backward(spec, x.shape, g)
        elif isinstance(spec, L.Dense):
            dx, dw, db = L.dense_backward(x, params[_key(i, "w")], g)
            grads[_key(i, "w")] += dw
            grads[_key(i, "b")] += db
        elif isinstance(spec, L.UpsampleBilinear):
            dx = L.upsample_backward(cache.aux[i], g)
        elif isinstance(spec, L.ResidualAdd):
            dx = g
            src = spec.source
            pending[src] = g.copy() if pending[src] is None else pending[src] + g
        if i > 0:
            pending[i - 1] = dx if pending[i - 1] is None else pending[i - 1] + dx
    return grads


# ---------------------------------------------------------------- text form

def spec_to_text(net: NetworkSpec) -> str:
    lines = ["network v1"]
    hw = "any" if net.input_hw is None else f"{net.input_hw[0]}x{net.input_hw[1]}"
    lines.append(f"input channels={net.in_channels} hw={hw}")
    lines.append(f"output {net.output}")
    for i, s in enumerate(net.layers):
        if isinstance(s, L.Conv):
            extra = f" out={s.out_channels} kernel={s.kernel[0]}x{s.kernel[1]} stride={s.stride} pad={s.pad}"
        elif isinstance(s, (L.MaxPool, L.AvgPool)):
            extra = f" window={s.window} stride={s.stride}"
        elif isinstance(s, L.Dense):
            extra = f" out={s.out_features}"
        elif isinstance(s, L.UpsampleBilinear):
            extra = f" scale={s.scale} match_input={'yes' if s.match_input else 'no'}"
        elif isinstance(s, L.ResidualAdd):
            extra = f" source={s.source}"
        else:
            extra = ""
        lines.append(f"layer {i} {s.kind}{extra}")
    return "\n".join(lines) + "\n"


def _parse_kv(tokens: list[str]) -> dict[str, str]:
    out = {}
    for tok in tokens:
        k, _, v = tok.partition("=")
        out[k] = v
    return out


def spec_from_text(text: str) -> NetworkSpec:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "network v1":
        raise ValueError("not a v1 network description")
    kv = _parse_kv(lines[1].split()[1:])
    in_channels = int(kv["channels"])
    input_hw = None
    if kv["hw"] != "any":
        m = re.fullmatch(r"(\d+)x(\d+)", kv["hw"])
        if not m:
            raise ValueError(f"bad hw field {kv['hw']!r}")
        input_hw = (int(m.group(1)), int(m.group(2)))
    output = lines[2].split()[1]
    specs: list[LayerSpec] = []
    for ln in lines[3:]:
        parts = ln.split()
        kind = parts[2]
        kv = _parse_kv(parts[3:])
        if kind == "conv":
            kh, kw = kv["kernel"].split("x")
            specs.append(
                L.Conv(int(kv["out"]), (int(kh), int(kw)), int(kv["stride"]), int(kv["pad"]))
            )
        elif kind == "batch-norm":
            specs.append(L.BatchNorm())
        elif kind == "relu":
            specs.append(L.Relu())
        elif kind == "max-pool":
            specs.append(L.MaxPool(int(kv["window"]), int(kv["stride"])))
        elif kind == "avg-pool":
            specs.append(L.AvgPool(int(kv["window"]), int(kv["stride"])))
        elif kind == "dense":
            specs.append(L.Dense(int(kv["out"])))
        elif kind == "upsample-bilinear":
            specs.append(L.UpsampleBilinear(int(kv["scale"]), kv["match_input"] == "yes"))
        elif kind == "residual-add":
            specs.append(L.ResidualAdd(int(kv["source"])))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return NetworkSpec(tuple(specs), in_channels, output, input_hw)
