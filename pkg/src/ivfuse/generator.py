"""Fusion generator: residual CNN stem + composite transformer fusion.

The two source images are concatenated on the channel axis and passed
through a small residual CNN that produces one feature map per scale
(stride-1 entry, then stride-2 residual blocks). On the coarsest scale a
composite transformer module derives a single-channel relation map in
[0, 1]:

  * the channel transformer treats every feature CHANNEL as one token
    (each channel average-pooled to a fixed grid, flattened, projected)
    and emits one sigmoid weight per channel;
  * the spatial transformer treats non-overlapping 4x4 patches as tokens
    and reconstructs a single-channel sigmoid map.

Both encoders are pre-norm ViT blocks without position embedding, which
makes them token-permutation equivariant; a sinusoidal embedding can be
switched on for the spatial tokens to study the difference. The relation
map is bilinearly resampled to every scale, multiplied into the features,
collapsed to one channel per scale by 1x1 convolutions, resampled to the
input size, summed and squashed through a sigmoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import GENERATOR_MAGIC, load_container, load_header, save_container
from .errors import DimensionError, InputError, NumericalError

TRANSFORMER_ORDERS = ("channel_then_spatial", "spatial_then_channel",
                      "spatial_only", "channel_only")


@dataclass
class FusionConfig:
    """Architecture hyper-parameters with their trained-model defaults."""
    cnn_layers: int = 4
    channels: int = 64
    spatial_patch: int = 4
    channel_patch: int = 16
    spatial_embed: int = 2048
    channel_embed: int = 128
    encoder_layers: int = 4
    heads: int = 8
    mlp_ratio: float = 2.0
    use_position_embedding: bool = False
    transformer_order: str = "channel_then_spatial"
    use_gan: bool = True

    def __post_init__(self):
        if self.cnn_layers < 2:
            raise InputError(f"cnn_layers must be >= 2, got {self.cnn_layers}")
        if self.channels < 8:
            raise InputError(f"channels must be >= 8, got {self.channels}")
        for name in ("spatial_patch", "channel_patch", "spatial_embed",
                     "channel_embed", "encoder_layers", "heads"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")
        if self.spatial_embed % self.heads:
            raise InputError(f"spatial_embed {self.spatial_embed} not divisible by heads {self.heads}")
        if self.channel_embed % self.heads:
            raise InputError(f"channel_embed {self.channel_embed} not divisible by heads {self.heads}")
        if self.mlp_ratio <= 0:
            raise InputError("mlp_ratio must be positive")
        if self.transformer_order not in TRANSFORMER_ORDERS:
            raise InputError(f"transformer_order must be one of {TRANSFORMER_ORDERS}, "
                             f"got {self.transformer_order!r}")

    @property
    def downsample_multiple(self) -> int:
        """Spatial divisibility the full pipeline requires of its inputs."""
        return (2 ** (self.cnn_layers - 1)) * self.spatial_patch


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class Linear:
    w: Tensor  # (in, out)
    b: Tensor  # (out,)


@dataclass
class Conv:
    w: Tensor  # (cout, cin, kh, kw)
    b: Tensor  # (cout,)


@dataclass
class Norm:
    gamma: Tensor
    beta: Tensor


@dataclass
class EncoderLayerParams:
    ln1: Norm
    q: Linear
    k: Linear
    v: Linear
    o: Linear
    ln2: Norm
    mlp1: Linear
    mlp2: Linear


@dataclass
class TransformerParams:
    proj: Linear
    layers: list = field(default_factory=list)
    head: Linear = None


@dataclass
class ResBlockParams:
    conv1: Conv
    conv2: Conv
    shortcut: Conv | None  # 1x1 projection when shapes change across the block


class GeneratorParams:
    """All learnable tensors, in a deterministic declaration order.

    The parameter set is a pure function of the config; `named_tensors`
    drives both optimization and the TGF1 checkpoint layout.
    """

    def __init__(self, config: FusionConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config.channels

        def conv(cout, cin, k):
            fan_in = cin * k * k
            bound = math.sqrt(6.0 / fan_in)
            return Conv(Tensor(rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)),
                        Tensor(np.zeros(cout, dtype=dtype)))

        def linear(nin, nout):
            bound = math.sqrt(6.0 / nin)
            return Linear(Tensor(rng.uniform(-bound, bound, size=(nin, nout)).astype(dtype)),
                          Tensor(np.zeros(nout, dtype=dtype)))

        def norm(n):
            return Norm(Tensor(np.ones(n, dtype=dtype)), Tensor(np.zeros(n, dtype=dtype)))

        def encoder(embed):
            hidden = int(embed * config.mlp_ratio)
            return [EncoderLayerParams(ln1=norm(embed), q=linear(embed, embed),
                                       k=linear(embed, embed), v=linear(embed, embed),
                                       o=linear(embed, embed), ln2=norm(embed),
                                       mlp1=linear(embed, hidden), mlp2=linear(hidden, embed))
                    for _ in range(config.encoder_layers)]

        self.stem_proj = conv(c, 2, 3)
        self.stem_blocks = [ResBlockParams(conv1=conv(c, c, 3), conv2=conv(c, c, 3),
                                           shortcut=conv(c, c, 1))
                            for _ in range(config.cnn_layers - 1)]
        self.chan = TransformerParams(proj=linear(config.channel_patch ** 2, config.channel_embed),
                                      layers=encoder(config.channel_embed),
                                      head=linear(config.channel_embed, 1))
        self.spat = TransformerParams(proj=linear(c * config.spatial_patch ** 2, config.spatial_embed),
                                      layers=encoder(config.spatial_embed),
                                      head=linear(config.spatial_embed, config.spatial_patch ** 2))
        self.out_projs = [conv(1, c, 1) for _ in range(config.cnn_layers)]
        for t in self.tensors():
            t.requires_grad = True

    def named_tensors(self):
        def walk(prefix, obj):
            if isinstance(obj, Tensor):
                yield prefix, obj
            elif isinstance(obj, (Linear, Conv, Norm, EncoderLayerParams, ResBlockParams, TransformerParams)):
                for f in fields(obj):
                    val = getattr(obj, f.name)
                    if val is not None:
                        yield from walk(f"{prefix}.{f.name}", val)
            elif isinstance(obj, list):
                for i, item in enumerate(obj):
                    yield from walk(f"{prefix}[{i}]", item)

        yield from walk("stem_proj", self.stem_proj)
        yield from walk("stem_blocks", self.stem_blocks)
        yield from walk("chan", self.chan)
        yield from walk("spat", self.spat)
        yield from walk("out_projs", self.out_projs)

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors()))

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None


# ---------------------------------------------------------------------------
# CNN stem
# ---------------------------------------------------------------------------

def res_block(x: Tensor, params: ResBlockParams, stride: int) -> Tensor:
    """conv3x3(stride) - relu - conv3x3(1), plus a stride-matched shortcut."""
    if stride not in (1, 2):
        raise InputError(f"res_block stride must be 1 or 2, got {stride}")
    h, w = x.shape[2], x.shape[3]
    if stride == 2 and (h % 2 or w % 2):
        raise DimensionError(f"res_block stride 2 requires even extents, got {h}x{w}")
    y = ad.relu(ad.conv2d(x, params.conv1.w, params.conv1.b, stride=stride, pad=1))
    y = ad.conv2d(y, params.conv2.w, params.conv2.b, stride=1, pad=1)
    if stride == 1 and params.conv1.w.shape[0] == x.shape[1]:
        short = x
    else:
        if params.shortcut is None:
            raise DimensionError("res_block: shape change without a shortcut projection")
        short = ad.conv2d(x, params.shortcut.w, params.shortcut.b, stride=stride, pad=0)
    return y + short


def cnn_stem(pair: Tensor, params: GeneratorParams) -> list:
    """Per-scale features F1..FL; F1 at input resolution, each next halved."""
    cfg = params.config
    levels = cfg.cnn_layers
    h, w = pair.shape[2], pair.shape[3]
    need = 2 ** (levels - 1)
    if h % need or w % need:
        raise DimensionError(f"cnn_stem: extents {h}x{w} must be divisible by {need} "
                             f"for {levels} scales")
    feats = [ad.relu(ad.conv2d(pair, params.stem_proj.w, params.stem_proj.b, stride=1, pad=1))]
    for block in params.stem_blocks:
        feats.append(res_block(feats[-1], block, stride=2))
    return feats


# ---------------------------------------------------------------------------
# transformers
# ---------------------------------------------------------------------------

def _attention(x: Tensor, lp: EncoderLayerParams, heads: int) -> Tensor:
    b, n, e = x.shape
    d = e // heads

    def split(t):
        return ad.permute(ad.reshape(t, (b, n, heads, d)), (0, 2, 1, 3))

    q = split(ad.matmul(x, lp.q.w) + lp.q.b)
    k = split(ad.matmul(x, lp.k.w) + lp.k.b)
    v = split(ad.matmul(x, lp.v.w) + lp.v.b)
    att = ad.softmax(ad.matmul(q, ad.permute(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d)), axis=-1)
    out = ad.reshape(ad.permute(ad.matmul(att, v), (0, 2, 1, 3)), (b, n, e))
    return ad.matmul(out, lp.o.w) + lp.o.b


def _encoder(x: Tensor, layers, heads: int) -> Tensor:
    for lp in layers:
        h = ad.layer_norm(x, lp.ln1.gamma, lp.ln1.beta)
        x = x + _attention(h, lp, heads)
        h = ad.layer_norm(x, lp.ln2.gamma, lp.ln2.beta)
        x = x + ad.matmul(ad.gelu(ad.matmul(h, lp.mlp1.w) + lp.mlp1.b), lp.mlp2.w) + lp.mlp2.b
    return x


def _adaptive_pool_matrix(n_in: int, grid: int, dtype) -> np.ndarray:
    """(grid, n_in) row-averaging matrix of an adaptive average pool.

    For n_in < grid the cells collapse to single rows, i.e. rows are
    duplicated, which is the edge-padded behaviour undersized inputs need.
    """
    mat = np.zeros((grid, n_in), dtype=dtype)
    for i in range(grid):
        start = (i * n_in) // grid
        end = max(start + 1, -(-((i + 1) * n_in) // grid))
        mat[i, start:end] = 1.0 / (end - start)
    return mat


def channel_tokens(f: Tensor, grid: int) -> Tensor:
    """One token per channel: the channel pooled to grid x grid, flattened."""
    b, c, h, w = f.shape
    pr = Tensor(_adaptive_pool_matrix(h, grid, f.dtype))
    pc = Tensor(_adaptive_pool_matrix(w, grid, f.dtype).T)
    pooled = ad.matmul(ad.matmul(pr, f), pc)  # (b, c, grid, grid)
    return ad.reshape(pooled, (b, c, grid * grid))


def channel_transformer(f: Tensor, params: GeneratorParams) -> Tensor:
    """Per-channel weights in (0, 1), shape (b, c, 1, 1).

    Channels are the tokens and there is never a position embedding, so
    permuting input channels permutes the output weights identically.
    """
    cfg = params.config
    b, c = f.shape[0], f.shape[1]
    tokens = ad.matmul(channel_tokens(f, cfg.channel_patch), params.chan.proj.w) + params.chan.proj.b
    tokens = _encoder(tokens, params.chan.layers, cfg.heads)
    weights = ad.sigmoid(ad.matmul(tokens, params.chan.head.w) + params.chan.head.b)
    return ad.reshape(weights, (b, c, 1, 1))


def _sinusoidal_embedding(n: int, e: int, dtype) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(e, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / e)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


def spatial_transformer(f: Tensor, params: GeneratorParams) -> Tensor:
    """Single-channel relation map in (0, 1) at the input's resolution."""
    cfg = params.config
    b, c, h, w = f.shape
    p = cfg.spatial_patch
    tokens = ad.matmul(patchify_features(f, p), params.spat.proj.w) + params.spat.proj.b
    if cfg.use_position_embedding:
        tokens = tokens + Tensor(_sinusoidal_embedding(tokens.shape[1], tokens.shape[2], f.dtype))
    tokens = _encoder(tokens, params.spat.layers, cfg.heads)
    out = ad.matmul(tokens, params.spat.head.w) + params.spat.head.b  # (b, n, p*p)
    return ad.sigmoid(ad.unpatchify(out, 1, h, w, p))


def patchify_features(f: Tensor, p: int) -> Tensor:
    h, w = f.shape[2], f.shape[3]
    if h % p or w % p:
        raise DimensionError(f"spatial transformer: extents {h}x{w} not divisible by patch {p}")
    return ad.patchify(f, p)


def _channel_collapse(f: Tensor) -> Tensor:
    """(b, c, h, w) -> sigmoid of the channel mean, a (b, 1, h, w) map."""
    return ad.sigmoid(f.mean(axis=1, keepdims=True))


def transformer_fusion_module(f: Tensor, params: GeneratorParams, order: str | None = None) -> Tensor:
    """Relation map at the coarsest scale, per the configured stage order."""
    order = order or params.config.transformer_order
    if order == "spatial_only":
        return spatial_transformer(f, params)
    if order == "channel_only":
        return _channel_collapse(f * channel_transformer(f, params))
    if order == "channel_then_spatial":
        return spatial_transformer(f * channel_transformer(f, params), params)
    if order == "spatial_then_channel":
        g = f * spatial_transformer(f, params)
        return _channel_collapse(g * channel_transformer(g, params))
    raise InputError(f"unknown transformer order {order!r}")


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def _stage_finite(t: Tensor, stage: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite values after stage {stage!r}")
    return t


def generate(ir: Tensor, vis: Tensor, params: GeneratorParams,
             config: FusionConfig | None = None) -> Tensor:
    """Fuse an aligned (b, 1, h, w) pair into a (b, 1, h, w) image in (0, 1)."""
    config = config or params.config
    if not isinstance(ir, Tensor):
        ir = Tensor(ir)
    if not isinstance(vis, Tensor):
        vis = Tensor(vis)
    if ir.shape != vis.shape:
        raise InputError(f"source shapes differ: {tuple(ir.shape)} vs {tuple(vis.shape)}")
    if ir.ndim != 4 or ir.shape[1] != 1:
        raise InputError(f"expected (b, 1, h, w) sources, got {tuple(ir.shape)}")
    for name, t in (("ir", ir), ("vis", vis)):
        lo, hi = float(t.data.min()), float(t.data.max())
        if lo < 0.0 or hi > 1.0:
            raise InputError(f"{name} values must lie in [0, 1], got range [{lo:g}, {hi:g}]")

    h, w = ir.shape[2], ir.shape[3]
    feats = cnn_stem(ad.concat([ir, vis], axis=1), params)
    _stage_finite(feats[-1], "cnn_stem")
    fmap = _stage_finite(transformer_fusion_module(feats[-1], params), "transformer_fusion_module")

    total = None
    for k, (feat, proj) in enumerate(zip(feats, params.out_projs)):
        m = ad.resample(fmap, feat.shape[2], feat.shape[3], "bilinear")
        weighted = feat * m
        collapsed = ad.conv2d(weighted, proj.w, proj.b, stride=1, pad=0)
        up = ad.resample(collapsed, h, w, "bilinear")
        _stage_finite(up, f"scale_{k}")
        total = up if total is None else total + up
    return _stage_finite(ad.sigmoid(total), "output")


# ---------------------------------------------------------------------------
# checkpoints ("TGF1")
# ---------------------------------------------------------------------------

def _config_header(config: FusionConfig) -> dict:
    return {f.name: str(getattr(config, f.name)) for f in fields(FusionConfig)}


def config_from_header(header: dict) -> FusionConfig:
    kwargs = {}
    for f in fields(FusionConfig):
        if f.name not in header:
            continue
        raw = header[f.name]
        if f.type == "bool":
            kwargs[f.name] = raw.lower() in ("true", "1", "yes")
        elif f.type == "int":
            kwargs[f.name] = int(raw)
        elif f.type == "float":
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    return FusionConfig(**kwargs)


def save_generator(path: str, params: GeneratorParams) -> None:
    save_container(path, GENERATOR_MAGIC, _config_header(params.config),
                   [t.data for _, t in params.named_tensors()])


def load_generator(path: str, dtype=np.float32) -> GeneratorParams:
    config = config_from_header(load_header(path, GENERATOR_MAGIC))
    params = GeneratorParams(config, seed=0, dtype=dtype)
    named = list(params.named_tensors())
    _, arrays = load_container(path, GENERATOR_MAGIC, [(n, t.shape) for n, t in named])
    for (_, t), arr in zip(named, arrays):
        t.data = np.ascontiguousarray(arr.astype(dtype))
    return params
