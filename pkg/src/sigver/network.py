"""Two-branch embedding network for signature images.

Architecture: a shared four-stage convolutional base, then a global branch
and a regional branch.  Each branch map is fused multiplicatively with
stride-2 transforms of two earlier (shallower) feature maps, re-weighted
per channel by a joint attention block that couples both branches, and
finally reduced to embeddings: one from the whole global map and six from
overlapping vertical/horizontal windows of the regional map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ndgrad import (
    Tensor,
    batchnorm2d,
    concat,
    conv2d,
    gap,
    l2_normalize,
    linear,
    maxpool2d,
)
from .ndgrad.optim import ParameterStore


class ConfigError(ValueError):
    """Raised when a configuration is internally inconsistent."""


def _fusion_padding(src: int, target: int) -> int:
    """Padding so a 3x3 stride-2 conv maps size src to exactly target."""
    pad = max(0, math.ceil((2 * target + 1 - src) / 2))
    if (src + 2 * pad - 3) // 2 + 1 != target:
        raise ConfigError(
            f"no 3x3 stride-2 padding maps size {src} to {target}"
        )
    return pad


def _region_starts(dim: int, window: int, overlap: int, axis: str) -> tuple[int, int, int]:
    stride = window - overlap
    if stride < 1:
        raise ConfigError(f"{axis} region stride must be >= 1 "
                          f"(window {window}, overlap {overlap})")
    if window >= dim:
        raise ConfigError(f"{axis} region window {window} must be smaller than map {dim}")
    if dim - window != 2 * stride:
        raise ConfigError(
            f"{axis} regions do not tile: map {dim}, window {window}, "
            f"overlap {overlap} requires map = window + 2*(window - overlap)"
        )
    return (0, stride, 2 * stride)


@dataclass
class NetConfig:
    """Network dimensions.  Defaults give the full-size operating point.

    The convolutional base halves the spatial size three times (after
    stages 1, 2 and 4), so deep maps are input/8 per axis.  Region windows
    must tile their axis in exactly three overlapping pieces.
    """

    input_h: int = 128
    input_w: int = 200
    stage_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    branch_channels: int = 256     # channels of both branch maps
    attention_dim: int = 32        # reduced descriptor length in attention
    embedding_dim: int = 1024
    region_w: int = 13             # width of each vertical (column) window
    region_w_overlap: int = 7
    region_h: int = 8              # height of each horizontal (row) window
    region_h_overlap: int = 4
    fusion: str = "multiply"       # or "concat"

    def __post_init__(self):
        if self.fusion not in ("multiply", "concat"):
            raise ConfigError(f"fusion must be multiply or concat, got {self.fusion!r}")
        if len(self.stage_channels) != 4 or any(c < 1 for c in self.stage_channels):
            raise ConfigError("stage_channels must be four positive ints")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be positive")
        if not (0 < self.attention_dim < self.branch_channels):
            raise ConfigError(
                f"attention_dim must lie in (0, {self.branch_channels}), "
                f"got {self.attention_dim}"
            )
        if self.input_h < 8 or self.input_w < 8:
            raise ConfigError("input dims must be at least 8x8")
        # Shape trace through the base: pool after stages 1, 2 and 4.
        h, w = self.input_h, self.input_w
        self.shape_f1 = (self.stage_channels[0], h // 2, w // 2)
        self.shape_f2 = (self.stage_channels[1], h // 4, w // 4)
        self.shape_f3 = (self.stage_channels[2], h // 4, w // 4)
        self.shape_f4 = (self.stage_channels[3], h // 8, w // 8)
        self.deep_h = self.shape_f4[1]
        self.deep_w = self.shape_f4[2]
        if self.deep_h < 2 or self.deep_w < 2:
            raise ConfigError("input too small: deep maps collapse below 2x2")
        self.fuse_pad_h = _fusion_padding(self.shape_f2[1], self.deep_h)
        self.fuse_pad_w = _fusion_padding(self.shape_f2[2], self.deep_w)
        self.region_w_starts = _region_starts(
            self.deep_w, self.region_w, self.region_w_overlap, "vertical")
        self.region_h_starts = _region_starts(
            self.deep_h, self.region_h, self.region_h_overlap, "horizontal")

    @classmethod
    def full(cls) -> "NetConfig":
        return cls()

    @classmethod
    def desk(cls) -> "NetConfig":
        """CPU-friendly size: 64x100 inputs, deep maps 8x12, 128-d embeddings."""
        return cls(input_h=64, input_w=100, stage_channels=(8, 16, 32, 64),
                   branch_channels=64, attention_dim=8, embedding_dim=128,
                   region_w=6, region_w_overlap=3, region_h=4, region_h_overlap=2)

    @classmethod
    def tiny(cls) -> "NetConfig":
        """Gradient-check size: every parameter finite-differencable in minutes."""
        return cls(input_h=32, input_w=56, stage_channels=(2, 4, 4, 8),
                   branch_channels=8, attention_dim=2, embedding_dim=16,
                   region_w=3, region_w_overlap=1, region_h=2, region_h_overlap=1)


@dataclass
class AttentionState:
    """Intermediate descriptors of the joint channel-attention block."""

    pooled_global: Tensor      # [N, C] spatial means of the global map
    pooled_regional: Tensor    # [N, C]
    reduced_global: Tensor     # [N, V] after reduction + relu
    reduced_regional: Tensor   # [N, V]
    fused: Tensor              # [N, V] elementwise product
    gate_global: Tensor        # [N, C] sigmoid channel weights
    gate_regional: Tensor      # [N, C]


@dataclass
class EmbeddingSet:
    """One image's embeddings: a global vector plus six region vectors.

    Regions are ordered r1..r3 (vertical windows, left to right) then
    r4..r6 (horizontal windows, top to bottom).
    """

    global_embedding: Tensor
    region_embeddings: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.region_embeddings) != 6:
            raise ValueError(
                f"expected 6 region embeddings, got {len(self.region_embeddings)}"
            )
        for e in [self.global_embedding, *self.region_embeddings]:
            if not np.all(np.isfinite(e.data)):
                raise ValueError("embedding contains non-finite values")

    def all_embeddings(self) -> list:
        return [self.global_embedding, *self.region_embeddings]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

REGION_NAMES = ("region1", "region2", "region3", "region4", "region5", "region6")


def _add_conv(store, rng, name, c_out, c_in, k, dtype):
    bound = 1.0 / math.sqrt(c_in * k * k)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype)
    store.add(f"{name}.w", w)
    store.add(f"{name}.b", np.zeros(c_out, dtype=dtype))


def _add_bn(store, name, c, dtype):
    store.add(f"{name}.gamma", np.ones(c, dtype=dtype))
    store.add(f"{name}.beta", np.zeros(c, dtype=dtype))
    store.add(f"{name}.running_mean", np.zeros(c, dtype=dtype), trainable=False)
    store.add(f"{name}.running_var", np.ones(c, dtype=dtype), trainable=False)


def _add_linear(store, rng, name, n_out, n_in, dtype):
    bound = 1.0 / math.sqrt(n_in)
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype))
    store.add(f"{name}.b", np.zeros(n_out, dtype=dtype))


def init_params(cfg: NetConfig, rng: np.random.Generator,
                dtype=np.float64) -> ParameterStore:
    """Fresh parameter store: uniform fan-in weights, zero biases, unit BN."""
    store = ParameterStore()
    c1, c2, c3, c4 = cfg.stage_channels
    cc = cfg.branch_channels
    ins = (1, c1, c2, c3)
    outs = (c1, c2, c3, c4)
    for i in range(4):
        _add_conv(store, rng, f"base.conv{i + 1}", outs[i], ins[i], 3, dtype)
        _add_bn(store, f"base.bn{i + 1}", outs[i], dtype)
    for branch in ("global", "regional"):
        _add_conv(store, rng, f"branch.{branch}.conv", cc, c4, 3, dtype)
        _add_bn(store, f"branch.{branch}.bn", cc, dtype)
    # Shared stride-2 transforms of the two shallow maps.
    _add_conv(store, rng, "fuse.low", cc, c2, 3, dtype)
    _add_conv(store, rng, "fuse.mid", cc, c3, 3, dtype)
    if cfg.fusion == "concat":
        for branch in ("global", "regional"):
            _add_conv(store, rng, f"fuse.proj.{branch}", cc, 3 * cc, 1, dtype)
    for branch in ("global", "regional"):
        _add_linear(store, rng, f"attn.reduce.{branch}", cfg.attention_dim, cc, dtype)
    for branch in ("global", "regional"):
        _add_linear(store, rng, f"attn.recover.{branch}", cc, cfg.attention_dim, dtype)
    _add_linear(store, rng, "embed.global", cfg.embedding_dim, cc, dtype)
    for rname in REGION_NAMES:
        _add_linear(store, rng, f"embed.{rname}", cfg.embedding_dim, cc, dtype)
    return store


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def _conv_bn_relu(x, params, conv_name, bn_name, training, stride=1, padding=1):
    h = conv2d(x, params[f"{conv_name}.w"], params[f"{conv_name}.b"],
               stride=stride, padding=padding)
    h = batchnorm2d(h, params[f"{bn_name}.gamma"], params[f"{bn_name}.beta"],
                    params[f"{bn_name}.running_mean"].data,
                    params[f"{bn_name}.running_var"].data,
                    training=training)
    return h.relu()


def forward_base(x: Tensor, params: ParameterStore, cfg: NetConfig,
                 training: bool):
    """Shared base: four conv/bn/relu stages, pooling after 1, 2 and 4.

    Returns the four stage outputs; the middle two feed the fusion
    transforms and the last feeds both branches.
    """
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected input [N,1,H,W], got {x.shape}")
    if x.shape[2] != cfg.input_h or x.shape[3] != cfg.input_w:
        raise ValueError(
            f"input {x.shape[2]}x{x.shape[3]} does not match configured "
            f"{cfg.input_h}x{cfg.input_w}"
        )
    f1 = maxpool2d(_conv_bn_relu(x, params, "base.conv1", "base.bn1", training), 2)
    f2 = maxpool2d(_conv_bn_relu(f1, params, "base.conv2", "base.bn2", training), 2)
    f3 = _conv_bn_relu(f2, params, "base.conv3", "base.bn3", training)
    f4 = maxpool2d(_conv_bn_relu(f3, params, "base.conv4", "base.bn4", training), 2)
    return f1, f2, f3, f4


def branch_head(f4: Tensor, params: ParameterStore, branch: str, training: bool):
    """Branch-specific conv stage producing the pre-fusion deep map."""
    return _conv_bn_relu(f4, params, f"branch.{branch}.conv",
                         f"branch.{branch}.bn", training)


def fusion_transforms(f2: Tensor, f3: Tensor, params: ParameterStore,
                      cfg: NetConfig):
    """Stride-2 3x3 transforms aligning the shallow maps with the deep maps.

    Shared by both branches; no normalization or activation follows them.
    """
    pad = (cfg.fuse_pad_h, cfg.fuse_pad_w)
    t2 = conv2d(f2, params["fuse.low.w"], params["fuse.low.b"], stride=2, padding=pad)
    t3 = conv2d(f3, params["fuse.mid.w"], params["fuse.mid.b"], stride=2, padding=pad)
    return t2, t3


def fuse_multilevel(f2: Tensor, f3: Tensor, branch_map: Tensor,
                    params: ParameterStore, cfg: NetConfig,
                    branch: str = "global",
                    transforms: tuple | None = None) -> Tensor:
    """Combine shallow and deep information into the final branch map.

    multiply mode: elementwise product transform(f2) * transform(f3) * map.
    concat mode: channel concatenation followed by a branch-specific 1x1
    projection back to the branch width.
    """
    t2, t3 = transforms if transforms is not None else fusion_transforms(
        f2, f3, params, cfg)
    if t2.shape != branch_map.shape or t3.shape != branch_map.shape:
        raise ValueError(
            f"fusion shape mismatch: {t2.shape} / {t3.shape} vs {branch_map.shape}"
        )
    if cfg.fusion == "multiply":
        return t2 * t3 * branch_map
    joined = concat([t2, t3, branch_map], axis=1)
    return conv2d(joined, params[f"fuse.proj.{branch}.w"],
                  params[f"fuse.proj.{branch}.b"])


def channel_attention(global_map: Tensor, regional_map: Tensor,
                      params: ParameterStore):
    """Joint channel re-weighting of both branch maps.

    Each map is pooled to a channel descriptor, reduced by a
    descriptor-specific linear+relu, and the two reduced descriptors are
    multiplied into one shared code.  Branch-specific recovery layers map
    the code back to per-channel sigmoid gates.
    """
    if global_map.shape != regional_map.shape:
        raise ValueError(
            f"branch maps differ: {global_map.shape} vs {regional_map.shape}"
        )
    n, c = global_map.shape[0], global_map.shape[1]
    pooled_g = gap(global_map)                                  # [N, C]
    pooled_r = gap(regional_map)
    red_g = linear(pooled_g, params["attn.reduce.global.w"],
                   params["attn.reduce.global.b"]).relu()       # [N, V]
    red_r = linear(pooled_r, params["attn.reduce.regional.w"],
                   params["attn.reduce.regional.b"]).relu()
    fused = red_g * red_r
    gate_g = linear(fused, params["attn.recover.global.w"],
                    params["attn.recover.global.b"]).sigmoid()  # [N, C]
    gate_r = linear(fused, params["attn.recover.regional.w"],
                    params["attn.recover.regional.b"]).sigmoid()
    out_g = global_map * gate_g.reshape(n, c, 1, 1)
    out_r = regional_map * gate_r.reshape(n, c, 1, 1)
    state = AttentionState(pooled_g, pooled_r, red_g, red_r, fused, gate_g, gate_r)
    return out_g, out_r, state


def divide_regions(regional_map: Tensor, cfg: NetConfig) -> list:
    """Cut the regional map into three vertical and three horizontal windows.

    Vertical windows are full-height column bands ordered left to right;
    horizontal windows are full-width row bands ordered top to bottom.
    """
    h, w = regional_map.shape[-2], regional_map.shape[-1]
    if h != cfg.deep_h or w != cfg.deep_w:
        raise ValueError(
            f"regional map {h}x{w} does not match configured {cfg.deep_h}x{cfg.deep_w}"
        )
    regions = []
    for start in cfg.region_w_starts:
        regions.append(regional_map[..., :, start:start + cfg.region_w])
    for start in cfg.region_h_starts:
        regions.append(regional_map[..., start:start + cfg.region_h, :])
    return regions


def _pool_normalize_embed(feature_map: Tensor, params: ParameterStore,
                          name: str) -> Tensor:
    pooled = gap(feature_map)
    normalized = l2_normalize(pooled)
    return linear(normalized, params[f"embed.{name}.w"], params[f"embed.{name}.b"])


def embed_global(global_map: Tensor, params: ParameterStore) -> Tensor:
    """Pooled, unit-normalized, linearly projected global embedding."""
    return _pool_normalize_embed(global_map, params, "global")


def embed_regions(region_maps, params: ParameterStore) -> list:
    """Per-region embeddings through region-specific output layers."""
    if len(region_maps) != len(REGION_NAMES):
        raise ValueError(f"expected {len(REGION_NAMES)} region maps, "
                         f"got {len(region_maps)}")
    return [_pool_normalize_embed(m, params, name)
            for m, name in zip(region_maps, REGION_NAMES)]


def forward_batch(x: Tensor, params: ParameterStore, cfg: NetConfig,
                  training: bool) -> list:
    """Full pipeline for a batch [N,1,H,W] -> seven [N,emb] tensors.

    Index 0 is the global branch; 1..6 are regions r1..r6.
    """
    _, f2, f3, f4 = forward_base(x, params, cfg, training)
    g_pre = branch_head(f4, params, "global", training)
    r_pre = branch_head(f4, params, "regional", training)
    transforms = fusion_transforms(f2, f3, params, cfg)
    g_fused = fuse_multilevel(f2, f3, g_pre, params, cfg, "global", transforms)
    r_fused = fuse_multilevel(f2, f3, r_pre, params, cfg, "regional", transforms)
    g_att, r_att, _ = channel_attention(g_fused, r_fused, params)
    regions = divide_regions(r_att, cfg)
    return [embed_global(g_att, params), *embed_regions(regions, params)]


def forward(x: Tensor, params: ParameterStore, cfg: NetConfig,
            mode: str = "eval") -> EmbeddingSet:
    """Single-image forward; ``mode`` is "train" or "eval"."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    streams = forward_batch(x, params, cfg, training=(mode == "train"))
    vectors = [s[0] for s in streams]
    return EmbeddingSet(vectors[0], vectors[1:])
