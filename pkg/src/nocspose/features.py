"""Dense per-pixel feature channel: PCA compression with a pluggable
extractor interface.

The stand-in extractor produces deterministic 32-dim features from a fixed
bank of color-opponent and oriented difference-of-Gaussian filters at two
scales, so the pipeline runs with no pretrained vision model. Real
foundation-model features can be dropped in from a binary file (see
read_feature_file) without code changes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError

STANDIN_DIM = 32
_BANK_SEED = 2718
FEATURE_MAGIC = b"NFT1"


@dataclass
class FeatureMap:
    """h x w x D dense features with a provenance tag."""

    values: np.ndarray
    provenance: str = "stand-in"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[2] < 1:
            raise GeometryError("feature map must be h x w x D with D >= 1")
        if not np.isfinite(v).all():
            raise GeometryError("feature map contains non-finite values")
        self.values = v

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass
class PcaBasis:
    """Mean vector plus top-M orthonormal components with their variances."""

    mean: np.ndarray        # (D,)
    components: np.ndarray  # (M, D), rows orthonormal
    variances: np.ndarray   # (M,), non-increasing

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.components = np.asarray(self.components, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        m, d = self.components.shape
        if m > d or m != len(self.variances) or d != len(self.mean):
            raise GeometryError("inconsistent PCA basis shapes")
        gram = self.components @ self.components.T
        if np.abs(gram - np.eye(m)).max() > 1e-8:
            raise GeometryError("PCA components not orthonormal")
        if np.any(np.diff(self.variances) > 1e-12):
            raise GeometryError("PCA variances must be non-increasing")

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    @property
    def m(self) -> int:
        return self.components.shape[0]


def pca_fit(rows: np.ndarray, m: int) -> PcaBasis:
    """Top-m principal components of the rows by descending variance.

    Signs are fixed so each component's largest-magnitude entry is
    positive, making the result deterministic.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise GeometryError("pca_fit expects an N x D matrix")
    n, d = x.shape
    if m < 1 or m > d or m > n:
        raise GeometryError(f"invalid PCA target dimension m={m} for "
                            f"{n} rows of dimension {d}")
    mean = x.mean(axis=0)
    xc = x - mean
    denom = max(n - 1, 1)
    cov = (xc.T @ xc) / denom
    evals, evecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(evals)[::-1][:m]
    comps = evecs[:, order].T
    variances = np.maximum(evals[order], 0.0)
    for row in comps:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PcaBasis(mean, comps, variances)


def pca_project(rows: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Raw projection (x - mean) onto the basis rows, no rescaling."""
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[-1] != basis.dim:
        raise GeometryError("feature dimension does not match PCA basis")
    return (x - basis.mean) @ basis.components.T


def pca_apply(fm: FeatureMap, basis: PcaBasis,
              foreground: np.ndarray | None = None) -> FeatureMap:
    """Project a feature map and rescale each channel to [0, 1].

    The affine rescale is computed over foreground pixels (all pixels when
    no mask is given); background pixels become 0 to match the null
    conditioning convention. A constant channel maps to 0.5.
    """
    if fm.dim != basis.dim:
        raise GeometryError("feature dimension does not match PCA basis")
    h, w, _ = fm.values.shape
    proj = pca_project(fm.values.reshape(-1, fm.dim).astype(np.float64), basis)
    proj = proj.reshape(h, w, basis.m)
    if foreground is None:
        foreground = np.ones((h, w), dtype=bool)
    fg = proj[foreground]
    if fg.size == 0:
        raise GeometryError("no foreground pixels to rescale over")
    lo = fg.min(axis=0)
    hi = fg.max(axis=0)
    span = hi - lo
    flat = span < 1e-12
    out = np.where(flat, 0.5, (proj - lo) / np.where(flat, 1.0, span))
    out = np.clip(out, 0.0, 1.0)
    out[~foreground] = 0.0
    return FeatureMap(out.astype(np.float32), provenance=fm.provenance)


def nearest_resize(fm: FeatureMap, size: tuple) -> FeatureMap:
    """Nearest-neighbor resize; output values are a subset of input values."""
    h, w = size
    if h <= 0 or w <= 0:
        raise GeometryError("size must be positive")
    sh, sw = fm.values.shape[:2]
    rows = np.floor((np.arange(h) + 0.5) * sh / h).astype(np.int64).clip(0, sh - 1)
    cols = np.floor((np.arange(w) + 0.5) * sw / w).astype(np.int64).clip(0, sw - 1)
    return FeatureMap(fm.values[rows[:, None], cols[None, :]], fm.provenance)


# ---------------------------------------------------------------------------
# stand-in extractor


def _gauss_kernel(sigma: float, half: int) -> np.ndarray:
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _oriented_dog(sigma: float, angle_deg: float, half: int) -> np.ndarray:
    """Odd difference-of-Gaussians: two offset Gaussian lobes along angle."""
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    a = np.deg2rad(angle_deg)
    u = np.cos(a) * x + np.sin(a) * y
    v = -np.sin(a) * x + np.cos(a) * y
    lobe = lambda shift: np.exp(-0.5 * (((u - shift) / sigma) ** 2
                                        + (v / (1.6 * sigma)) ** 2))
    k = lobe(sigma) - lobe(-sigma)
    return k / np.abs(k).sum()


def _build_bank():
    rng = np.random.default_rng(_BANK_SEED)
    scales = [rng.uniform(0.95, 1.05), rng.uniform(1.9, 2.1)]
    blurs, dogs = [], []
    for s in scales:
        half = int(np.ceil(3 * s))
        blurs.append(_gauss_kernel(s, half))
        dogs.append([_oriented_dog(s, ang, half) for ang in (0, 45, 90, 135)])
    return scales, blurs, dogs


_BANK = _build_bank()


def _conv2_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    pad = np.pad(img, ((ph, ph), (pw, pw)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, (kh, kw))
    return np.einsum("hwij,ij->hw", win, kernel)


def _sep_blur(img: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    half = len(k1d) // 2
    pad = np.pad(img, ((half, half), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, (len(k1d),), axis=0)
    out = win @ k1d
    pad = np.pad(out, ((0, 0), (half, half)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, (len(k1d),), axis=1)
    return win @ k1d


def standin_features(rgb: np.ndarray) -> FeatureMap:
    """Deterministic 32-channel dense features for an RGB image in [0, 1].

    Channel layout: 2 raw opponent channels, then per scale (2) and per
    opponent channel (3): a Gaussian blur and 4 rectified oriented DoG
    responses, i.e. 2 + 2*3*(1+4) = 32.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise GeometryError("standin_features expects an H x W x 3 image")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    lum = (r + g + b) / 3.0
    rg = (r - g) / 2.0 + 0.5
    by = (b - (r + g) / 2.0) / 2.0 + 0.5
    opponents = [lum, rg, by]
    channels = [rg, by]
    _, blurs, dogs = _BANK
    for si in range(2):
        for ch in opponents:
            channels.append(_sep_blur(ch, blurs[si]))
            for k in dogs[si]:
                channels.append(np.abs(_conv2_same(ch, k)))
    out = np.stack(channels, axis=2).astype(np.float32)
    assert out.shape[2] == STANDIN_DIM
    return FeatureMap(out, provenance="stand-in")


# ---------------------------------------------------------------------------
# external feature files


def write_feature_file(path, fm: FeatureMap) -> None:
    """Binary layout: 16-byte header (magic, h, w, D as little-endian
    uint32) followed by float32 values in row-major h x w x D order."""
    h, w, d = fm.values.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", h, w, d))
        f.write(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())


def read_feature_file(path) -> FeatureMap:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != FEATURE_MAGIC:
            raise GeometryError(f"not a feature file: {path}")
        h, w, d = struct.unpack("<III", header[4:])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != h * w * d:
        raise GeometryError(f"feature file truncated: {path}")
    return FeatureMap(data.reshape(h, w, d).copy(), provenance="external file")
