"""Conditional U-Net noise estimator with explicit reverse-mode gradients.

Input is the channel concatenation [noisy map (3), normal (3), RGB (3),
features (M)]; three (configurable) resolution levels of residual blocks
with group normalization, each block adding a learned projection of the
context vector (time embedding + category embedding); decoder skip
connections by channel concatenation; a zero-initialized output head so an
untrained network predicts zero noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import GeometryError
from . import layers as L


@dataclass(frozen=True)
class UNetConfig:
    size: int = 64
    feat_dim: int = 6
    channels: tuple = (32, 64, 128)
    blocks: int = 2
    groups: int = 8
    sin_dim: int = 32
    time_dim: int = 64
    emb_dim: int = 16
    categories: int = 2  # real categories; embedding table has one extra
                         # row 0 for "unknown"

    def __post_init__(self):
        if self.size % (1 << (self.levels - 1)) != 0:
            raise GeometryError("size must be divisible by 2**(levels-1)")
        if self.sin_dim % 2 != 0:
            raise GeometryError("sin_dim must be even")
        for _, cin, cout in block_channels(self):
            if cin % self.groups or cout % self.groups:
                raise GeometryError(
                    f"groups={self.groups} must divide block channels "
                    f"({cin}, {cout})")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def in_channels(self) -> int:
        return 9 + self.feat_dim

    @property
    def ctx_dim(self) -> int:
        return self.time_dim + self.emb_dim

    @property
    def table_rows(self) -> int:
        return self.categories + 1

    def to_dict(self) -> dict:
        return {"size": self.size, "feat_dim": self.feat_dim,
                "channels": list(self.channels), "blocks": self.blocks,
                "groups": self.groups, "sin_dim": self.sin_dim,
                "time_dim": self.time_dim, "emb_dim": self.emb_dim,
                "categories": self.categories}

    @staticmethod
    def from_dict(d: dict) -> "UNetConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return UNetConfig(**d)


def block_channels(cfg: UNetConfig) -> list:
    """(name, c_in, c_out) for every residual block in execution order."""
    chans = cfg.channels
    out = []
    cin = chans[0]
    for lvl in range(cfg.levels):
        for b in range(cfg.blocks):
            out.append((f"enc{lvl}.b{b}", cin, chans[lvl]))
            cin = chans[lvl]
    for lvl in range(cfg.levels - 2, -1, -1):
        cin = chans[lvl + 1] + chans[lvl]
        for b in range(cfg.blocks):
            out.append((f"dec{lvl}.b{b}", cin, chans[lvl]))
            cin = chans[lvl]
    return out


@dataclass
class UNetParams:
    """All learnable arrays, keyed by block-qualified names."""

    config: UNetConfig
    arrays: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def copy(self) -> "UNetParams":
        return UNetParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "UNetParams":
        return UNetParams(self.config,
                          {k: v.astype(dtype) for k, v in self.arrays.items()})

    def check_finite(self) -> None:
        for k, v in self.arrays.items():
            if not np.isfinite(v).all():
                raise FloatingPointError(f"non-finite parameter array: {k}")


def init_params(cfg: UNetConfig, seed: int = 0,
                dtype=np.float32) -> UNetParams:
    rng = np.random.default_rng(seed)
    arrays: dict = {}

    def conv3(name, cin, cout, zero=False):
        if zero:
            arrays[f"{name}.w"] = np.zeros((cout, cin, 3, 3))
        else:
            std = np.sqrt(2.0 / (cin * 9))
            arrays[f"{name}.w"] = rng.normal(0.0, std, (cout, cin, 3, 3))
        arrays[f"{name}.b"] = np.zeros(cout)

    def dense(name, din, dout):
        std = np.sqrt(2.0 / din)
        arrays[f"{name}.w"] = rng.normal(0.0, std, (dout, din))
        arrays[f"{name}.b"] = np.zeros(dout)

    def gn(name, c):
        arrays[f"{name}.g"] = np.ones(c)
        arrays[f"{name}.b"] = np.zeros(c)

    dense("time.l1", cfg.sin_dim, cfg.time_dim)
    dense("time.l2", cfg.time_dim, cfg.time_dim)
    arrays["cat.table"] = rng.normal(0.0, 0.1, (cfg.table_rows, cfg.emb_dim))

    conv3("stem", cfg.in_channels, cfg.channels[0])
    for name, cin, cout in block_channels(cfg):
        gn(f"{name}.gn1", cin)
        conv3(f"{name}.conv1", cin, cout)
        dense(f"{name}.ctx", cfg.ctx_dim, cout)
        gn(f"{name}.gn2", cout)
        conv3(f"{name}.conv2", cout, cout)
        if cin != cout:
            std = np.sqrt(1.0 / cin)
            arrays[f"{name}.skip.w"] = rng.normal(0.0, std, (cout, cin))
            arrays[f"{name}.skip.b"] = np.zeros(cout)
    gn("head.gn", cfg.channels[0])
    conv3("head", cfg.channels[0], 3, zero=True)

    return UNetParams(cfg, {k: v.astype(dtype) for k, v in arrays.items()})


# ---------------------------------------------------------------------------
# conditioning containers


@dataclass
class ConditionSet:
    """Per-sample conditioning: any image may be None (null = zeros) and
    category 0 means unknown. Images are HWC."""

    normal: np.ndarray | None = None
    rgb: np.ndarray | None = None
    feat: np.ndarray | None = None
    category: int = 0

    def __post_init__(self):
        sizes = set()
        for img in (self.normal, self.rgb, self.feat):
            if img is not None:
                if img.ndim != 3 or img.shape[0] != img.shape[1]:
                    raise GeometryError("condition images must be square HWC")
                sizes.add(img.shape[0])
        if len(sizes) > 1:
            raise GeometryError("condition images must share one size")
        if self.category < 0:
            raise GeometryError("category must be >= 0")


@dataclass
class CondBatch:
    """Stacked NHWC condition arrays; missing modalities are zeros."""

    normal: np.ndarray
    rgb: np.ndarray
    feat: np.ndarray
    category: np.ndarray  # (N,) int64


def _as_img(img: np.ndarray | None, channels: int, size: int, dtype):
    if img is None:
        return np.zeros((size, size, channels), dtype=dtype)
    if img.shape != (size, size, channels):
        raise GeometryError(f"condition image shape {img.shape} != "
                            f"({size}, {size}, {channels})")
    return np.ascontiguousarray(img, dtype=dtype)


def build_cond_batch(conds: list, cfg: UNetConfig, dtype) -> CondBatch:
    s, m = cfg.size, cfg.feat_dim
    normal = np.stack([_as_img(c.normal, 3, s, dtype) for c in conds])
    rgb = np.stack([_as_img(c.rgb, 3, s, dtype) for c in conds])
    feat = np.stack([_as_img(c.feat, m, s, dtype) for c in conds])
    cats = np.asarray([c.category for c in conds], dtype=np.int64)
    return CondBatch(normal, rgb, feat, cats)


# ---------------------------------------------------------------------------
# context embedding


def sinusoid_encoding(k: np.ndarray, dim: int) -> np.ndarray:
    """Half sines then half cosines over a geometric frequency ladder."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = np.asarray(k, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def embed_context(params: UNetParams, k: np.ndarray, cats: np.ndarray):
    """Context vector: MLP(sinusoid(k)) concatenated with the category row."""
    cfg = params.config
    a = params.arrays
    cats = np.asarray(cats, dtype=np.int64)
    if np.any(cats < 0) or np.any(cats >= cfg.table_rows):
        raise GeometryError(
            f"category id out of range [0, {cfg.table_rows - 1}]")
    sin = sinusoid_encoding(k, cfg.sin_dim).astype(params.dtype)
    h1, c1 = L.linear_fwd(sin, a["time.l1.w"], a["time.l1.b"])
    s1, cs = L.silu_fwd(h1)
    t, c2 = L.linear_fwd(s1, a["time.l2.w"], a["time.l2.b"])
    emb = a["cat.table"][cats]
    ctx = np.concatenate([t, emb], axis=1)
    return ctx, (c1, cs, c2, cats)


def embed_context_bwd(params: UNetParams, dctx: np.ndarray, cache, grads):
    cfg = params.config
    c1, cs, c2, cats = cache
    dt = dctx[:, :cfg.time_dim]
    demb = dctx[:, cfg.time_dim:]
    dtable = np.zeros_like(params.arrays["cat.table"])
    np.add.at(dtable, cats, demb)
    grads["cat.table"] = dtable
    ds1, grads["time.l2.w"], grads["time.l2.b"] = L.linear_bwd(dt, c2)
    dh1 = L.silu_bwd(ds1, cs)
    _, grads["time.l1.w"], grads["time.l1.b"] = L.linear_bwd(dh1, c1)


# ---------------------------------------------------------------------------
# residual block


def _resblock_fwd(a: dict, name: str, x: np.ndarray, ctx: np.ndarray,
                  groups: int):
    h, cg1 = L.group_norm_fwd(x, a[f"{name}.gn1.g"], a[f"{name}.gn1.b"], groups)
    h, cs1 = L.silu_fwd(h)
    h, cc1 = L.conv3x3_fwd(h, a[f"{name}.conv1.w"], a[f"{name}.conv1.b"])
    proj, cctx = L.linear_fwd(ctx, a[f"{name}.ctx.w"], a[f"{name}.ctx.b"])
    h = h + proj[:, None, None, :]
    h, cg2 = L.group_norm_fwd(h, a[f"{name}.gn2.g"], a[f"{name}.gn2.b"], groups)
    h, cs2 = L.silu_fwd(h)
    h, cc2 = L.conv3x3_fwd(h, a[f"{name}.conv2.w"], a[f"{name}.conv2.b"])
    if f"{name}.skip.w" in a:
        sk, csk = L.conv1x1_fwd(x, a[f"{name}.skip.w"], a[f"{name}.skip.b"])
    else:
        sk, csk = x, None
    return h + sk, (cg1, cs1, cc1, cctx, cg2, cs2, cc2, csk)


def _resblock_bwd(a: dict, name: str, dy: np.ndarray, cache, grads):
    cg1, cs1, cc1, cctx, cg2, cs2, cc2, csk = cache
    dh, grads[f"{name}.conv2.w"], grads[f"{name}.conv2.b"] = \
        L.conv3x3_bwd(dy, cc2)
    dh = L.silu_bwd(dh, cs2)
    dh, grads[f"{name}.gn2.g"], grads[f"{name}.gn2.b"] = \
        L.group_norm_bwd(dh, cg2)
    dproj = dh.sum(axis=(1, 2))
    dctx, grads[f"{name}.ctx.w"], grads[f"{name}.ctx.b"] = \
        L.linear_bwd(dproj, cctx)
    dh, grads[f"{name}.conv1.w"], grads[f"{name}.conv1.b"] = \
        L.conv3x3_bwd(dh, cc1)
    dh = L.silu_bwd(dh, cs1)
    dx, grads[f"{name}.gn1.g"], grads[f"{name}.gn1.b"] = \
        L.group_norm_bwd(dh, cg1)
    if csk is not None:
        dsk, grads[f"{name}.skip.w"], grads[f"{name}.skip.b"] = \
            L.conv1x1_bwd(dy, csk)
        dx = dx + dsk
    else:
        dx = dx + dy
    return dx, dctx


# ---------------------------------------------------------------------------
# full network


def unet_forward(params: UNetParams, x_noisy: np.ndarray, cond: CondBatch,
                 k: np.ndarray, want_cache: bool = False):
    """Predict the noise for a batch of noisy maps.

    x_noisy: (N, S, S, 3) in the diffusion value range. Returns eps_hat of
    the same shape, plus a cache for unet_backward when requested.
    """
    cfg = params.config
    a = params.arrays
    n, s, s2, c = x_noisy.shape
    if c != 3 or s != cfg.size or s2 != cfg.size:
        raise GeometryError(f"x_noisy must be (N, {cfg.size}, {cfg.size}, 3)")
    x_noisy = np.ascontiguousarray(x_noisy, dtype=params.dtype)

    ctx, emb_cache = embed_context(params, k, cond.category)
    inp = np.concatenate([
        x_noisy,
        cond.normal.astype(params.dtype, copy=False),
        cond.rgb.astype(params.dtype, copy=False),
        cond.feat.astype(params.dtype, copy=False),
    ], axis=3)

    cache = {"emb": emb_cache, "blocks": {}, "pools": [], "ups": []}
    x, cache["stem"] = L.conv3x3_fwd(inp, a["stem.w"], a["stem.b"])
    skips = []
    for lvl in range(cfg.levels):
        for b in range(cfg.blocks):
            name = f"enc{lvl}.b{b}"
            x, cache["blocks"][name] = _resblock_fwd(a, name, x, ctx,
                                                     cfg.groups)
        if lvl < cfg.levels - 1:
            skips.append(x)
            x, cpool = L.avgpool2_fwd(x)
            cache["pools"].append(cpool)
    for lvl in range(cfg.levels - 2, -1, -1):
        x, cup = L.upsample2_fwd(x)
        cache["ups"].append((lvl, cup, x.shape[3]))
        x = np.concatenate([x, skips[lvl]], axis=3)
        for b in range(cfg.blocks):
            name = f"dec{lvl}.b{b}"
            x, cache["blocks"][name] = _resblock_fwd(a, name, x, ctx,
                                                     cfg.groups)
    h, cache["head_gn"] = L.group_norm_fwd(x, a["head.gn.g"], a["head.gn.b"],
                                           cfg.groups)
    h, cache["head_silu"] = L.silu_fwd(h)
    eps_hat, cache["head_conv"] = L.conv3x3_fwd(h, a["head.w"], a["head.b"])
    return (eps_hat, cache) if want_cache else eps_hat


def unet_backward(params: UNetParams, cache: dict, d_eps: np.ndarray) -> dict:
    """Gradients of a scalar loss w.r.t. every parameter array, given the
    loss gradient at the network output."""
    cfg = params.config
    a = params.arrays
    grads: dict = {}
    dctx_total = None

    dh, grads["head.w"], grads["head.b"] = L.conv3x3_bwd(
        d_eps.astype(params.dtype, copy=False), cache["head_conv"])
    dh = L.silu_bwd(dh, cache["head_silu"])
    dx, grads["head.gn.g"], grads["head.gn.b"] = L.group_norm_bwd(
        dh, cache["head_gn"])

    dskips = {}
    for lvl in range(0, cfg.levels - 1):  # reverse of decoder execution
        for b in range(cfg.blocks - 1, -1, -1):
            name = f"dec{lvl}.b{b}"
            dx, dctx = _resblock_bwd(a, name, dx, cache["blocks"][name], grads)
            dctx_total = dctx if dctx_total is None else dctx_total + dctx
        _, cup, up_ch = cache["ups"][cfg.levels - 2 - lvl]
        dskips[lvl] = dx[..., up_ch:]
        dx = L.upsample2_bwd(np.ascontiguousarray(dx[..., :up_ch]), cup)

    for lvl in range(cfg.levels - 1, -1, -1):
        if lvl < cfg.levels - 1:
            dx = L.avgpool2_bwd(dx, cache["pools"][lvl])
            dx = dx + dskips[lvl]
        for b in range(cfg.blocks - 1, -1, -1):
            name = f"enc{lvl}.b{b}"
            dx, dctx = _resblock_bwd(a, name, dx, cache["blocks"][name], grads)
            dctx_total = dctx if dctx_total is None else dctx_total + dctx

    _, grads["stem.w"], grads["stem.b"] = L.conv3x3_bwd(dx, cache["stem"])
    embed_context_bwd(params, dctx_total, cache["emb"], grads)

    missing = set(a) - set(grads)
    assert not missing, f"missing gradients for {sorted(missing)}"
    return grads
