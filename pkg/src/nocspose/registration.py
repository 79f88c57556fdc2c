"""Robust similarity-transform estimation between predicted canonical
coordinates and observed depth points.

The solver decouples the problem TEASER-style: (1) scale by adaptive
voting over pairwise length ratios, (2) rotation by graduated non-convexity
over a truncated-least-squares cost with a closed-form weighted SVD inner
step, (3) translation by component-wise adaptive voting. The fraction of
correspondences within the noise bound under the final transform is the
pose confidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (GeometryError, Intrinsics, NocsMap, RigidPose,
                       SimilarityTransform, backproject)


@dataclass
class CorrespondenceSet:
    """Paired points: src in centered canonical units, dst in scene units."""

    src: np.ndarray
    dst: np.ndarray
    pixels: np.ndarray | None = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.float64).reshape(-1, 3)
        self.dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 3)
        if len(self.src) != len(self.dst):
            raise GeometryError("src/dst length mismatch")
        if len(self.src) < 3:
            raise GeometryError("insufficient correspondences")
        if not (np.isfinite(self.src).all() and np.isfinite(self.dst).all()):
            raise GeometryError("non-finite correspondences")

    def __len__(self) -> int:
        return len(self.src)


@dataclass
class RobustParams:
    noise_bound: float
    max_correspondences: int = 512
    gnc_factor: float = 1.4
    max_iterations: int = 100
    seed: int = 0
    scale_pair_multiplier: int = 4

    def __post_init__(self):
        if not self.noise_bound > 0:
            raise GeometryError("noise bound must be positive")
        if not self.gnc_factor > 1:
            raise GeometryError("GNC continuation factor must exceed 1")


@dataclass
class PoseHypothesis:
    transform: SimilarityTransform | None
    confidence: float
    index: int = 0
    rotation_inlier_rate: float | None = None  # diagnostic, rotation stage

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise GeometryError("confidence must be in [0, 1]")


def default_noise_bound(dst_points: np.ndarray, fraction: float = 0.02) -> float:
    """Noise bound heuristic: a fraction of the observed cloud's bbox
    diagonal (a proxy for object size)."""
    span = dst_points.max(axis=0) - dst_points.min(axis=0)
    return max(float(np.linalg.norm(span)) * fraction, 1e-9)


def build_correspondences(nocs: NocsMap, depth: np.ndarray, mask: np.ndarray,
                          intr: Intrinsics, max_n: int = 512,
                          rng: np.random.Generator | None = None
                          ) -> CorrespondenceSet:
    """Pixel-aligned pairs (centered NOCS value, backprojected depth point),
    uniformly subsampled without replacement above max_n."""
    eligible = np.asarray(mask, dtype=bool) & (depth > 0) & nocs.mask
    if eligible.sum() < 3:
        raise GeometryError("insufficient correspondences")
    cloud = backproject(depth, intr, eligible)
    src = nocs.values[cloud.pixels[:, 0], cloud.pixels[:, 1]] - 0.5
    dst = cloud.points
    pixels = cloud.pixels
    if len(src) > max_n:
        if rng is None:
            rng = np.random.default_rng(0)
        keep = np.sort(rng.choice(len(src), size=max_n, replace=False))
        src, dst, pixels = src[keep], dst[keep], pixels[keep]
    return CorrespondenceSet(src, dst, pixels)


def umeyama(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity aligning src to dst (scale, rotation with
    det +1 via reflection correction, translation from centroids)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) < 3:
        raise GeometryError("need at least 3 pairs")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    cov = (b.T @ a) / len(src)
    u, s, vt = np.linalg.svd(cov)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise GeometryError("degenerate configuration")
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = u @ np.diag(d) @ vt
    var_src = (a ** 2).sum() / len(src)
    if var_src < 1e-24:
        raise GeometryError("degenerate configuration")
    scale = float((s * d).sum() / var_src)
    if scale <= 0:
        raise GeometryError("degenerate configuration")
    t = mu_d - scale * rot @ mu_s
    return SimilarityTransform(scale, RigidPose(rot, t))


def inlier_rate(corrs: CorrespondenceSet, transform: SimilarityTransform,
                noise_bound: float) -> float:
    """Fraction of pairs whose residual is within the noise bound."""
    res = np.linalg.norm(corrs.dst - transform.apply(corrs.src), axis=1)
    return float(np.mean(res <= noise_bound))


def _max_stab_point(lo: np.ndarray, hi: np.ndarray) -> float:
    """Point covered by the most closed intervals (endpoint sweep)."""
    values = np.concatenate([lo, hi])
    delta = np.concatenate([np.ones(len(lo)), -np.ones(len(hi))])
    order = np.lexsort((-delta, values))  # starts before ends on ties
    depth = np.cumsum(delta[order])
    i = int(np.argmax(depth))
    ev = values[order]
    return float((ev[i] + ev[min(i + 1, len(ev) - 1)]) / 2.0)


def _vote_consensus(values: np.ndarray, half_widths: np.ndarray) -> float:
    """Adaptive voting: median of the values whose uncertainty interval
    covers the maximum-consensus point."""
    lo = values - half_widths
    hi = values + half_widths
    p = _max_stab_point(lo, hi)
    covered = (lo <= p) & (hi >= p)
    if not covered.any():
        return float(np.median(values))
    return float(np.median(values[covered]))


def _weighted_kabsch(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # rotation mapping a -> b (b ~= R a): svd of the b-a cross covariance
    h = (b * w[:, None]).T @ a
    u, _, vt = np.linalg.svd(h)
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(u @ vt)) or 1.0
    return (u * d) @ vt


def _sample_pairs(n: int, multiplier: int, rng: np.random.Generator):
    n_pairs = min(multiplier * n, n * (n - 1) // 2)
    i = rng.integers(0, n, size=2 * n_pairs)
    j = rng.integers(0, n, size=2 * n_pairs)
    ok = i != j
    return i[ok][:n_pairs], j[ok][:n_pairs]


def _estimate_scale(du: np.ndarray, dv: np.ndarray, noise_bound: float):
    """Adaptive voting over pairwise length ratios |dv| / |du|.

    Also returns the mask of pairs consistent with the winning scale; the
    rotation stage runs on those survivors (the consensus typically keeps
    nearly all inlier-inlier pairs while discarding most outlier pairs).
    """
    ls = np.linalg.norm(du, axis=1)
    ld = np.linalg.norm(dv, axis=1)
    valid = ls > 1e-9
    if not valid.any():
        return 1.0, valid
    ratios = np.where(valid, ld / np.maximum(ls, 1e-300), np.inf)
    alphas = np.where(valid, 2.0 * noise_bound / np.maximum(ls, 1e-300), 0.0)
    s = max(_vote_consensus(ratios[valid], alphas[valid]), 1e-9)
    consistent = valid & (np.abs(ratios - s) <= alphas)
    return s, consistent


def _gnc_rotation(u: np.ndarray, v: np.ndarray, params: RobustParams):
    """Graduated non-convexity over a truncated-least-squares rotation cost
    on scale-compensated pairwise differences (translation cancels), inner
    step = weighted closed-form rotation via SVD.

    Returns the rotation and the fraction of differences within the pair
    noise bound (the rotation-stage inlier rate diagnostic).
    """
    cbar2 = (2.0 * params.noise_bound) ** 2
    w = np.ones(len(u))
    rot = np.eye(3)
    mu = None
    for _ in range(params.max_iterations):
        if w.sum() < 2:
            break
        rot = _weighted_kabsch(u, v, w)
        r2 = ((v - u @ rot.T) ** 2).sum(axis=1)
        if mu is None:
            mu = cbar2 / max(2.0 * r2.max() - cbar2, 1e-12)
        lo = mu / (mu + 1.0) * cbar2
        hi = (mu + 1.0) / mu * cbar2
        # entries outside (lo, hi) are masked by the where; their overflow
        # in the surrogate weight formula is irrelevant
        with np.errstate(over="ignore", divide="ignore"):
            mid = np.sqrt(cbar2 * mu * (mu + 1.0)
                          / np.maximum(r2, 1e-300)) - mu
        w_new = np.where(r2 <= lo, 1.0,
                         np.where(r2 >= hi, 0.0, np.clip(mid, 0.0, 1.0)))
        if np.abs(w_new - w).max() < 1e-6:
            w = w_new
            break
        w = w_new
        mu *= params.gnc_factor
    r = np.linalg.norm(v - u @ rot.T, axis=1)
    rot_rate = float(np.mean(r <= 2.0 * params.noise_bound))
    return rot, rot_rate


def robust_register(corrs: CorrespondenceSet,
                    params: RobustParams) -> PoseHypothesis:
    """Decoupled robust similarity registration with inlier-rate confidence.

    Correspondences are processed in a canonical order, so the result does
    not depend on input ordering. An all-outlier result is not an error: it
    comes back as a hypothesis with confidence 0.
    """
    order = np.lexsort(tuple(corrs.src.T) + tuple(corrs.dst.T))
    src = corrs.src[order]
    dst = corrs.dst[order]
    rng = np.random.default_rng(params.seed)

    i, j = _sample_pairs(len(src), params.scale_pair_multiplier, rng)
    du = src[i] - src[j]
    dv = dst[i] - dst[j]

    scale, consistent = _estimate_scale(du, dv, params.noise_bound)
    if consistent.sum() < 3:
        consistent = np.ones(len(du), dtype=bool)
    rot, rot_rate = _gnc_rotation(scale * du[consistent], dv[consistent],
                                  params)

    e = dst - scale * (src @ rot.T)
    half = np.full(len(e), params.noise_bound)
    t = np.array([_vote_consensus(e[:, c], half) for c in range(3)])

    transform = SimilarityTransform(scale, RigidPose(rot, t))
    transform = _polish(src, dst, transform, params.noise_bound)
    conf = inlier_rate(CorrespondenceSet(src, dst), transform,
                       params.noise_bound)
    if conf * len(src) < 3:
        conf = 0.0
    return PoseHypothesis(transform, conf, rotation_inlier_rate=rot_rate)


def _polish(src: np.ndarray, dst: np.ndarray,
            transform: SimilarityTransform, noise_bound: float,
            rounds: int = 5) -> SimilarityTransform:
    """Refit on the consensus inlier set while the inlier count improves."""
    best = transform
    best_count = int(np.sum(np.linalg.norm(dst - best.apply(src), axis=1)
                            <= noise_bound))
    cur = transform
    for _ in range(rounds):
        res = np.linalg.norm(dst - cur.apply(src), axis=1)
        inl = res <= noise_bound
        if inl.sum() < 3:
            break
        try:
            cand = umeyama(src[inl], dst[inl])
        except GeometryError:
            break
        count = int(np.sum(np.linalg.norm(dst - cand.apply(src), axis=1)
                           <= noise_bound))
        if count < best_count:
            break
        if count >= best_count:
            best, best_count = cand, count
        cur = cand
    return best
