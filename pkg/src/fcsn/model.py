"""Fully convolutional sequence networks over frame-feature sequences.

Two variants share the same five-block convolutional encoder:

* ``fcn``: five stride-2 max-pools (native stride 32); ``conv6``/``conv7``
  head, a 2-channel score map upsampled x2 by a transposed convolution,
  a skip connection from ``pool4``, and a final x16 transposed
  convolution back to ``T`` frames.
* ``deeplab``: the last two pools keep stride 1 and ``conv5`` is dilated
  (native stride 8); a temporal pyramid of dilated branches is summed and
  upsampled x8 by bilinear interpolation or a learnable transposed
  convolution.

With ``reconstruction=True`` the model also carries a decoder that lifts
the coarse pre-classifier features back to ``T`` frames at ``dec_width``
channels, and a two-layer 1x1 head that reconstructs input features of
selected keyframes.

Activations are lists of ``(C, L)`` arrays, one per video.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import ConvSpec, Param

VARIANTS = ("fcn", "deeplab")
UPSAMPLERS = ("deconv", "bilinear")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 64
    variant: str = "fcn"
    upsampler: str = "deconv"
    block_widths: tuple[int, ...] = (16, 32, 64, 64, 64)
    convs_per_block: tuple[int, ...] = (2, 2, 3, 3, 3)
    head_width: int = 128
    dec_width: int = 128
    num_classes: int = 2
    dropout_rate: float = 0.5
    block_kernel: int = 3
    head_kernel: int = 7
    dilation_rates: tuple[int, ...] = (1, 2, 4, 8)
    reconstruction: bool = False

    def __post_init__(self):
        for name in ("block_widths", "convs_per_block", "dilation_rates"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.upsampler not in UPSAMPLERS:
            raise ValueError(f"upsampler must be one of {UPSAMPLERS}")
        if self.num_classes != 2:
            raise ValueError("num_classes is fixed at 2")
        if len(self.block_widths) != 5 or len(self.convs_per_block) != 5:
            raise ValueError("block_widths and convs_per_block need exactly 5 entries")
        widths = (self.input_dim, *self.block_widths, *self.convs_per_block, self.head_width, self.dec_width)
        if min(widths) < 1 or not self.dilation_rates or min(self.dilation_rates) < 1:
            raise ValueError("all widths, counts and dilation rates must be >= 1")
        if self.block_kernel % 2 == 0 or self.head_kernel % 2 == 0:
            raise ValueError("block and head kernels must be odd to preserve length")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def native_stride(self) -> int:
        return 32 if self.variant == "fcn" else 8

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    params: dict[str, Param]
    buffers: dict[str, np.ndarray]
    version: int = 0

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def copy(self) -> "ModelParams":
        params = {k: Param(p.value.copy(), p.grad.copy(), p.momentum_buf.copy()) for k, p in self.params.items()}
        return ModelParams(params, {k: v.copy() for k, v in self.buffers.items()}, self.version)

    def values_equal(self, other: "ModelParams") -> bool:
        """Bitwise equality of learnable values (buffers excluded)."""
        return self.params.keys() == other.params.keys() and all(
            self.params[k].value.tobytes() == other.params[k].value.tobytes() for k in self.params
        )


# -- layers ------------------------------------------------------------------


@dataclass
class _Ctx:
    params: ModelParams
    mode: str
    rng: np.random.Generator | None


class _Layer:
    def param_shapes(self) -> dict[str, tuple]:
        return {}

    def buffer_shapes(self) -> dict[str, tuple]:
        return {}

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {}


class _Conv(_Layer):
    def __init__(self, name, spec: ConvSpec):
        self.name, self.spec = name, spec

    def param_shapes(self):
        return {f"{self.name}.weight": self.spec.weight_shape, f"{self.name}.bias": (self.spec.out_channels,)}

    def init(self, rng):
        bound = np.sqrt(6.0 / (self.spec.in_channels * self.spec.kernel))
        return {
            f"{self.name}.weight": rng.uniform(-bound, bound, size=self.spec.weight_shape),
            f"{self.name}.bias": np.zeros(self.spec.out_channels),
        }

    def forward(self, ctx, xs):
        w, b = ctx.params[f"{self.name}.weight"].value, ctx.params[f"{self.name}.bias"].value
        return [nc.conv1d_forward(x, w, b, self.spec) for x in xs], xs

    def backward(self, ctx, xs, gys):
        pw, pb = ctx.params[f"{self.name}.weight"], ctx.params[f"{self.name}.bias"]
        gxs = []
        for x, g in zip(xs, gys):
            gx, gw, gb = nc.conv1d_backward(x, pw.value, self.spec, g)
            pw.grad += gw
            pb.grad += gb
            gxs.append(gx)
        return gxs


class _TConv(_Layer):
    """Transposed convolution ``in_ch -> out_ch``, initialised as bilinear upsampling."""

    def __init__(self, name, in_ch, out_ch, kernel, stride, padding):
        self.name = name
        self.spec = ConvSpec(out_ch, in_ch, kernel, stride, padding)

    def param_shapes(self):
        return {f"{self.name}.weight": self.spec.weight_shape, f"{self.name}.bias": (self.spec.in_channels,)}

    def init(self, rng):
        w = np.zeros(self.spec.weight_shape)
        filt = nc.bilinear_kernel(self.spec.kernel)
        for c in range(min(self.spec.in_channels, self.spec.out_channels)):
            w[c, c] = filt
        return {f"{self.name}.weight": w, f"{self.name}.bias": np.zeros(self.spec.in_channels)}

    def forward(self, ctx, xs):
        w, b = ctx.params[f"{self.name}.weight"].value, ctx.params[f"{self.name}.bias"].value
        return [nc.tconv1d_forward(x, w, b, self.spec) for x in xs], xs

    def backward(self, ctx, xs, gys):
        pw, pb = ctx.params[f"{self.name}.weight"], ctx.params[f"{self.name}.bias"]
        gxs = []
        for x, g in zip(xs, gys):
            gx, gw, gb = nc.tconv1d_backward(x, pw.value, self.spec, g)
            pw.grad += gw
            pb.grad += gb
            gxs.append(gx)
        return gxs


class _BN(_Layer):
    def __init__(self, name, channels):
        self.name, self.channels = name, channels

    def param_shapes(self):
        return {f"{self.name}.gamma": (self.channels,), f"{self.name}.beta": (self.channels,)}

    def buffer_shapes(self):
        return {f"{self.name}.running_mean": (self.channels,), f"{self.name}.running_var": (self.channels,)}

    def init(self, rng):
        return {
            f"{self.name}.gamma": np.ones(self.channels),
            f"{self.name}.beta": np.zeros(self.channels),
            f"{self.name}.running_mean": np.zeros(self.channels),
            f"{self.name}.running_var": np.ones(self.channels),
        }

    def forward(self, ctx, xs):
        p, buf = ctx.params, ctx.params.buffers
        return nc.batchnorm1d(
            xs,
            p[f"{self.name}.gamma"].value,
            p[f"{self.name}.beta"].value,
            ctx.mode,
            buf[f"{self.name}.running_mean"],
            buf[f"{self.name}.running_var"],
        )

    def backward(self, ctx, cache, gys):
        pg, pb = ctx.params[f"{self.name}.gamma"], ctx.params[f"{self.name}.beta"]
        gxs, gg, gb = nc.batchnorm1d_backward(cache, pg.value, gys)
        pg.grad += gg
        pb.grad += gb
        return gxs


class _ReLU(_Layer):
    def forward(self, ctx, xs):
        return [nc.relu(x) for x in xs], xs

    def backward(self, ctx, xs, gys):
        return [nc.relu_backward(x, g) for x, g in zip(xs, gys)]


class _Dropout(_Layer):
    def __init__(self, rate):
        self.rate = rate

    def forward(self, ctx, xs):
        out = [nc.dropout(x, self.rate, ctx.rng, ctx.mode) for x in xs]
        return [y for y, _ in out], [m for _, m in out]

    def backward(self, ctx, masks, gys):
        return [nc.dropout_backward(m, g) for m, g in zip(masks, gys)]


class _MaxPool(_Layer):
    def __init__(self, window, stride, padding=0):
        self.window, self.stride, self.padding = window, stride, padding

    def forward(self, ctx, xs):
        out = [nc.maxpool1d_forward(x, self.window, self.stride, self.padding) for x in xs]
        return [y for y, _ in out], [(idx, x.shape[1]) for (_, idx), x in zip(out, xs)]

    def backward(self, ctx, cache, gys):
        return [nc.maxpool1d_backward(idx, g, length) for (idx, length), g in zip(cache, gys)]


class _Bilinear(_Layer):
    def __init__(self, factor):
        self.factor = factor

    def forward(self, ctx, xs):
        return [nc.bilinear_upsample1d(x, self.factor) for x in xs], None

    def backward(self, ctx, cache, gys):
        return [nc.bilinear_upsample1d_backward(g, self.factor) for g in gys]


class _Stack:
    def __init__(self, layers: Sequence[_Layer]):
        self.layers = list(layers)

    def forward(self, ctx, xs):
        caches = []
        for layer in self.layers:
            xs, c = layer.forward(ctx, xs)
            caches.append(c)
        return xs, caches

    def backward(self, ctx, caches, gys):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            gys = layer.backward(ctx, c, gys)
        return gys


def _conv_block(prefix, c_in, width, n, kernel, dilation=1):
    layers = []
    for j in range(n):
        name = f"{prefix}_{j + 1}"
        spec = ConvSpec(c_in, width, kernel, padding=dilation * (kernel - 1) // 2, dilation=dilation)
        layers += [_Conv(name, spec), _BN(f"{name}.bn", width), _ReLU()]
        c_in = width
    return layers


def build_stacks(config: ModelConfig) -> dict[str, _Stack]:
    """The named layer stacks of a model; their order fixes parameter order."""
    k, widths, counts = config.block_kernel, config.block_widths, config.convs_per_block
    drop = config.dropout_rate
    stacks: dict[str, _Stack] = {}
    enc, c_in = [], config.input_dim
    if config.variant == "fcn":
        for i in range(4):
            enc += _conv_block(f"conv{i + 1}", c_in, widths[i], counts[i], k) + [_MaxPool(2, 2)]
            c_in = widths[i]
        stacks["encoder"] = _Stack(enc)
        head = _conv_block("conv5", c_in, widths[4], counts[4], k) + [_MaxPool(2, 2)]
        head += [
            _Conv("conv6", ConvSpec(widths[4], config.head_width, config.head_kernel, padding=config.head_kernel // 2)),
            _ReLU(), _Dropout(drop),
            _Conv("conv7", ConvSpec(config.head_width, config.head_width, 1)),
            _ReLU(), _Dropout(drop),
        ]
        stacks["head"] = _Stack(head)
        stacks["score"] = _Stack([
            _Conv("conv8", ConvSpec(config.head_width, 2, 1)),
            _BN("conv8.bn", 2),
            _TConv("deconv1", 2, 2, 4, 2, 1),
        ])
        stacks["skip"] = _Stack([_Conv("skip4", ConvSpec(widths[3], 2, 1)), _BN("skip4.bn", 2)])
        stacks["upsample"] = _Stack([_TConv("deconv2", 2, 2, 32, 16, 8)])
        if config.reconstruction:
            stacks["decoder"] = _Stack([
                _TConv("dec1", config.head_width, config.dec_width, 4, 2, 1),
                _TConv("dec2", config.dec_width, config.dec_width, 32, 16, 8),
            ])
    else:
        for i in range(5):
            dilation = 2 if i == 4 else 1
            pool = _MaxPool(2, 2) if i < 3 else _MaxPool(3, 1, 1)
            enc += _conv_block(f"conv{i + 1}", c_in, widths[i], counts[i], k, dilation) + [pool]
            c_in = widths[i]
        stacks["encoder"] = _Stack(enc)
        for r in config.dilation_rates:
            stacks[f"aspp{r}"] = _Stack([
                _Conv(f"aspp{r}.fc6", ConvSpec(widths[4], config.head_width, 3, padding=r, dilation=r)),
                _ReLU(), _Dropout(drop),
                _Conv(f"aspp{r}.fc7", ConvSpec(config.head_width, config.head_width, 1)),
                _ReLU(), _Dropout(drop),
                _Conv(f"aspp{r}.fc8", ConvSpec(config.head_width, 2, 1)),
                _BN(f"aspp{r}.bn", 2),
            ])
        if config.upsampler == "deconv":
            stacks["upsample"] = _Stack([_TConv("upsample", 2, 2, 16, 8, 4)])
        else:
            stacks["upsample"] = _Stack([_Bilinear(8)])
        if config.reconstruction:
            stacks["decoder"] = _Stack([_TConv("dec1", widths[4], config.dec_width, 16, 8, 4)])
    return stacks


def _head_convs(config: ModelConfig):
    return (
        _Conv("recon.in", ConvSpec(config.dec_width, config.input_dim, 1)),
        _Conv("recon.out", ConvSpec(config.input_dim, config.input_dim, 1)),
    )


def _all_layers(config: ModelConfig):
    for stack in build_stacks(config).values():
        yield from stack.layers
    if config.reconstruction:
        yield from _head_convs(config)


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    shapes = {}
    for layer in _all_layers(config):
        shapes.update(layer.param_shapes())
    return shapes


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Fan-in scaled uniform conv weights, zero biases, unit BN scales,
    bilinear transposed-convolution kernels.  Deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for layer in _all_layers(config):
        values = layer.init(rng)
        for name in layer.param_shapes():
            params[name] = Param(values[name])
        for name in layer.buffer_shapes():
            buffers[name] = values[name]
    return ModelParams(params, buffers)


# -- forward / backward ------------------------------------------------------


@dataclass
class ForwardCache:
    caches: dict
    lengths: list[int]
    mode: str
    version: int
    decoded: list | None = None
    used: bool = field(default=False)


def _check_inputs(config: ModelConfig, xs):
    for x in xs:
        if x.ndim != 2 or x.shape[1] != config.input_dim:
            raise ValueError(f"expected (T, {config.input_dim}) features, got {x.shape}")
        if len(x) == 0 or len(x) % config.native_stride:
            raise ValueError(
                f"sequence length {len(x)} is not a positive multiple of the native stride "
                f"{config.native_stride}; pad it first"
            )


def _context(params, mode, rng):
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    return _Ctx(params, mode, rng)


def forward_sumfcn(params: ModelParams, config: ModelConfig, xs, mode="eval", rng=None):
    if config.variant != "fcn":
        raise ValueError("forward_sumfcn needs variant='fcn'")
    return forward(params, config, xs, mode, rng)


def forward_sumdeeplab(params: ModelParams, config: ModelConfig, xs, mode="eval", rng=None):
    if config.variant != "deeplab":
        raise ValueError("forward_sumdeeplab needs variant='deeplab'")
    return forward(params, config, xs, mode, rng)


def forward(params: ModelParams, config: ModelConfig, xs: Sequence[np.ndarray], mode="eval", rng=None):
    """Score every frame of every video in ``xs`` (each ``(T, D)``).

    Returns ``(scores, cache)`` with one ``(T, 2)`` array per video.
    """
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    if not xs:
        raise ValueError("empty batch")
    _check_inputs(config, xs)
    ctx = _context(params, mode, rng)
    stacks = build_stacks(config)
    caches = {}
    maps = [x.T for x in xs]
    h, caches["encoder"] = stacks["encoder"].forward(ctx, maps)
    if config.variant == "fcn":
        coarse, caches["head"] = stacks["head"].forward(ctx, h)
        s, caches["score"] = stacks["score"].forward(ctx, coarse)
        k, caches["skip"] = stacks["skip"].forward(ctx, h)
        merged = [nc.elementwise_add(a, b) for a, b in zip(s, k)]
    else:
        coarse = h
        merged = None
        for r in config.dilation_rates:
            out, caches[f"aspp{r}"] = stacks[f"aspp{r}"].forward(ctx, h)
            merged = out if merged is None else [nc.elementwise_add(a, b) for a, b in zip(merged, out)]
    scores, caches["upsample"] = stacks["upsample"].forward(ctx, merged)
    decoded = None
    if config.reconstruction:
        decoded, caches["decoder"] = stacks["decoder"].forward(ctx, coarse)
    cache = ForwardCache(caches, [len(x) for x in xs], mode, params.version, decoded)
    return [s.T.copy() for s in scores], cache


def _add_lists(a, b):
    return [x + y for x, y in zip(a, b)]


def backward(
    params: ModelParams,
    config: ModelConfig,
    cache: ForwardCache,
    grad_scores: Sequence[np.ndarray] | None = None,
    grad_decoded: Sequence[np.ndarray] | None = None,
):
    """Accumulate parameter gradients into ``params`` for the given output gradients.

    ``grad_scores`` matches the ``(T, 2)`` score arrays; ``grad_decoded``
    matches ``cache.decoded``.  A cache can be consumed once, and only
    while the parameters are unchanged since its forward pass.
    """
    if cache.used or cache.version != params.version:
        raise ValueError("stale forward cache")
    cache.used = True
    ctx = _context(params, cache.mode, None)
    stacks = build_stacks(config)
    c = cache.caches
    n = len(cache.lengths)
    if grad_scores is None:
        grad_scores = [np.zeros((t, 2)) for t in cache.lengths]
    if len(grad_scores) != n or any(g.shape != (t, 2) for g, t in zip(grad_scores, cache.lengths)):
        raise ValueError("grad_scores do not match the forward outputs")
    g_merged = stacks["upsample"].backward(ctx, c["upsample"], [g.T for g in grad_scores])
    if config.variant == "fcn":
        g_coarse = stacks["score"].backward(ctx, c["score"], g_merged)
        g_h = stacks["skip"].backward(ctx, c["skip"], g_merged)
    else:
        g_coarse = None
        g_h = None
        for r in config.dilation_rates:
            g = stacks[f"aspp{r}"].backward(ctx, c[f"aspp{r}"], g_merged)
            g_h = g if g_h is None else _add_lists(g_h, g)
    if grad_decoded is not None:
        if not config.reconstruction:
            raise ValueError("model has no decoder")
        g_dec = stacks["decoder"].backward(ctx, c["decoder"], list(grad_decoded))
        g_coarse = g_dec if g_coarse is None else _add_lists(g_coarse, g_dec)
    if config.variant == "fcn":
        g_h = _add_lists(g_h, stacks["head"].backward(ctx, c["head"], g_coarse))
    elif g_coarse is not None:
        g_h = _add_lists(g_h, g_coarse)
    stacks["encoder"].backward(ctx, c["encoder"], g_h)


@dataclass
class HeadCache:
    selected: np.ndarray
    length: int
    dec_sel: np.ndarray
    merged: np.ndarray


def reconstruct_head(params: ModelParams, config: ModelConfig, decoded: np.ndarray, selected, x: np.ndarray):
    """Reconstruct the input features of the ``selected`` frames.

    ``decoded`` is one video's ``(dec_width, T)`` map from the forward
    cache, ``x`` its ``(T, D)`` features.  Returns ``(f, cache)`` with
    ``f`` of shape ``(len(selected), D)``.
    """
    if not config.reconstruction:
        raise ValueError("model has no reconstruction head")
    selected = np.asarray(selected, dtype=np.int64)
    length = decoded.shape[1]
    if selected.size == 0:
        raise ValueError("no frames selected")
    if selected.min() < 0 or selected.max() >= length:
        raise ValueError("selected frame index out of range")
    conv_in, conv_out = _head_convs(config)
    ctx = _Ctx(params, "eval", None)
    dec_sel = decoded[:, selected]
    lifted, _ = conv_in.forward(ctx, [dec_sel])
    merged = lifted[0] + np.asarray(x, dtype=np.float64)[selected].T
    out, _ = conv_out.forward(ctx, [merged])
    return out[0].T.copy(), HeadCache(selected, length, dec_sel, merged)


def reconstruct_head_backward(params: ModelParams, config: ModelConfig, cache: HeadCache, grad_f: np.ndarray):
    """Accumulates head gradients; returns the gradient wrt the full decoded map."""
    conv_in, conv_out = _head_convs(config)
    ctx = _Ctx(params, "eval", None)
    (g_merged,) = conv_out.backward(ctx, [cache.merged], [np.asarray(grad_f).T])
    (g_dec_sel,) = conv_in.backward(ctx, [cache.dec_sel], [g_merged])
    g_dec = np.zeros((g_dec_sel.shape[0], cache.length))
    np.add.at(g_dec, (slice(None), cache.selected), g_dec_sel)
    return g_dec


# -- checkpoints ---------------------------------------------------------------

_MAGIC = "FCSN-CHECKPOINT 1"


def save_params(path, params: ModelParams, config: ModelConfig):
    """Text manifest (config, then one ``kind name shape`` line per array) followed
    by every array as little-endian float64, in manifest order."""
    lines = [_MAGIC, "config " + json.dumps(config.to_dict(), sort_keys=True)]
    blobs = []
    for kind, table in (("param", {k: p.value for k, p in params.params.items()}), ("buffer", params.buffers)):
        for name, arr in table.items():
            lines.append(f"{kind} {name} {' '.join(str(s) for s in arr.shape)}".rstrip())
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for b in blobs:
            fh.write(b)


def load_params(path) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        raw = fh.read()
    stream = io.BytesIO(raw)
    if stream.readline().decode("utf-8", "replace").rstrip("\n") != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    header = stream.readline().decode("utf-8")
    if not header.startswith("config "):
        raise ValueError(f"{path}: missing config line")
    config = ModelConfig.from_dict(json.loads(header[len("config "):]))
    entries = []
    while True:
        line = stream.readline().decode("utf-8")
        if not line:
            raise ValueError(f"{path}: truncated manifest")
        line = line.rstrip("\n")
        if line == "end":
            break
        kind, name, *dims = line.split(" ")
        entries.append((kind, name, tuple(int(d) for d in dims)))
    params, buffers = {}, {}
    for kind, name, shape in entries:
        count = int(np.prod(shape, dtype=np.int64))
        buf = stream.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError(f"{path}: truncated payload at {name}")
        arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if kind == "param":
            params[name] = Param(arr)
        else:
            buffers[name] = arr
    if stream.read(1):
        raise ValueError(f"{path}: trailing bytes after payload")
    expected = param_shapes(config)
    if {k: p.shape for k, p in params.items()} != expected:
        raise ValueError(f"{path}: parameter shapes do not match the stored config")
    return ModelParams(params, buffers), config
