"""End-to-end inference: condition preparation, multi-noise sampling of
canonical coordinate maps, robust registration per hypothesis, and
highest-confidence selection.

Each hypothesis owns a private noise stream derived from (master seed,
hypothesis index), so results are bit-reproducible and independent of how
many hypotheses run or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import conditioning
from .diffusion.checkpoint import CheckpointBundle
from .diffusion.sampling import sample
from .diffusion.unet import ConditionSet
from .features import FeatureMap, nearest_resize
from .geometry import (BoundingBox, GeometryError, Intrinsics, NocsMap,
                       backproject, crop_warp_resize, unwarp_nocs)
from .registration import (PoseHypothesis, RobustParams,
                           build_correspondences, default_noise_bound,
                           robust_register)

MODALITIES = ("normal", "rgb", "feat", "category")
_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Order-sensitive 64-bit mix of integer seed components."""
    x = 0
    for p in parts:
        x = _splitmix64((x ^ (int(p) & _MASK64)) & _MASK64)
    return x


@dataclass
class InferenceRequest:
    mask: np.ndarray
    bbox: BoundingBox
    intr: Intrinsics
    rgb: np.ndarray | None = None
    depth: np.ndarray | None = None
    category: str | None = None
    modalities: tuple = MODALITIES
    n_noises: int = 6
    seed: int = 0
    sample_steps: int = 10
    external_features: FeatureMap | None = None

    def __post_init__(self):
        if self.rgb is None and self.depth is None:
            raise GeometryError("need at least one of depth / rgb")
        if self.n_noises < 1:
            raise GeometryError("n_noises must be >= 1")
        bad = set(self.modalities) - set(MODALITIES)
        if bad:
            raise GeometryError(f"unknown modalities: {sorted(bad)}")
        self.modalities = tuple(m for m in MODALITIES if m in self.modalities)


@dataclass
class HypothesisRecord:
    hypothesis: PoseHypothesis
    nocs: NocsMap  # in the original image frame
    seed: int


@dataclass
class InferenceResult:
    best: PoseHypothesis
    records: list
    noise_bound: float

    @property
    def hypotheses(self) -> list:
        return [r.hypothesis for r in self.records]

    @property
    def seeds(self) -> list:
        return [r.seed for r in self.records]

    def completed_points(self) -> np.ndarray:
        """Visible-surface completion: all foreground canonical points of
        the selected map, carried into the camera frame by the selected
        transform."""
        rec = self.records[self.best.index]
        pts = rec.nocs.foreground_points() - 0.5
        return self.best.transform.apply(pts)


def prepare_conditions(req: InferenceRequest, bundle: CheckpointBundle):
    """Masked, cropped, resized condition set for the network.

    Disabled modalities become null encodings (zero images, category 0).
    """
    if not np.asarray(req.mask, dtype=bool).any():
        raise GeometryError("empty mask")
    mods = req.modalities
    size = bundle.params.config.size
    want_normal = "normal" in mods
    if want_normal and req.depth is None:
        raise GeometryError("'normal' modality enabled without depth")
    needs_rgb = "rgb" in mods or ("feat" in mods
                                  and req.external_features is None)
    if needs_rgb and req.rgb is None:
        raise GeometryError("'rgb'/'feat' modality enabled without an RGB "
                            "image")
    sq = conditioning.crop_observation(
        req.rgb if needs_rgb else None, req.depth, req.mask, req.intr,
        req.bbox, size, want_normals=want_normal)
    feat = None
    if "feat" in mods:
        if bundle.basis is None:
            raise GeometryError("checkpoint has no PCA basis for features")
        external = req.external_features
        if external is not None:
            # external maps cover the full image frame: bring them to frame
            # resolution, then crop like every other channel
            full = nearest_resize(external, req.mask.shape)
            external = FeatureMap(
                crop_warp_resize(full.values, req.bbox, size, 0.0,
                                 "nearest"), full.provenance)
        feat = conditioning.feature_condition(sq.rgb, sq.mask, bundle.basis,
                                              external)
    category = 0
    if "category" in mods and req.category is not None:
        category = bundle.category_id(req.category)
    cond = ConditionSet(
        normal=sq.normals.astype(np.float32) if want_normal else None,
        rgb=sq.rgb.astype(np.float32) if "rgb" in mods else None,
        feat=feat.astype(np.float32) if feat is not None else None,
        category=category)
    return cond, sq.mask, req.bbox


def sample_maps(req: InferenceRequest, bundle: CheckpointBundle) -> list:
    """NOCS-map-only path (no registration): one full-frame map per noise."""
    cond, mask_sq, bbox = prepare_conditions(req, bundle)
    out = []
    for i in range(req.n_noises):
        seed_i = mix_seed(req.seed, i, 0)
        nocs_sq = sample(bundle.params, cond, bundle.sched, "fast",
                         req.sample_steps, np.random.default_rng(seed_i),
                         mask_sq)
        out.append((seed_i, unwarp_nocs(nocs_sq, bbox, req.mask.shape)))
    return out


def estimate(req: InferenceRequest, bundle: CheckpointBundle,
             robust: RobustParams | None = None,
             nocs_override: NocsMap | None = None) -> InferenceResult:
    """Multi-hypothesis pose estimation with confidence selection.

    nocs_override short-circuits the sampler with a fixed square map (used
    to isolate the registration path from the learned model).
    """
    if req.depth is None:
        raise GeometryError("pose estimation requires depth")
    cond, mask_sq, bbox = prepare_conditions(req, bundle)

    if robust is None:
        cloud = backproject(req.depth, req.intr, req.mask)
        robust = RobustParams(noise_bound=default_noise_bound(cloud.points))

    records = []
    for i in range(req.n_noises):
        seed_i = mix_seed(req.seed, i, 0)
        if nocs_override is not None:
            nocs_sq = nocs_override
        else:
            nocs_sq = sample(bundle.params, cond, bundle.sched, "fast",
                             req.sample_steps,
                             np.random.default_rng(seed_i), mask_sq)
        nocs_full = unwarp_nocs(nocs_sq, bbox, req.mask.shape)
        try:
            corrs = build_correspondences(
                nocs_full, req.depth, req.mask, req.intr,
                robust.max_correspondences,
                np.random.default_rng(mix_seed(req.seed, i, 1)))
            hyp = robust_register(
                corrs, replace(robust, seed=mix_seed(req.seed, i, 2)))
            hyp = replace(hyp, index=i)
        except GeometryError:
            hyp = PoseHypothesis(None, 0.0, index=i)
        records.append(HypothesisRecord(hyp, nocs_full, seed_i))

    best = select_best([r.hypothesis for r in records])
    return InferenceResult(best, records, robust.noise_bound)


def select_best(hypotheses: list) -> PoseHypothesis:
    """Highest confidence wins; ties break toward the lowest index."""
    valid = [h for h in hypotheses if h.transform is not None]
    if not valid:
        raise GeometryError("no valid hypothesis")
    return max(valid, key=lambda h: (h.confidence, -h.index))


def rotation_spread(hypotheses: list, probe_axis=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Rotated probe axis per hypothesis, for unit-sphere export/plotting."""
    if len(hypotheses) == 0:
        raise GeometryError("need at least one hypothesis")
    probe = np.asarray(probe_axis, dtype=np.float64)
    return np.stack([h.transform.rotation @ probe for h in hypotheses
                     if h.transform is not None])


def result_to_dict(result: InferenceResult, modalities: tuple,
                   nocs_paths: list | None = None) -> dict:
    """JSON-ready summary: best transform (4x4 row-major), scale,
    confidence, per-hypothesis entries, seeds, and emitted map paths."""
    def hyp_entry(rec: HypothesisRecord, path: str | None) -> dict:
        h = rec.hypothesis
        entry = {
            "index": h.index,
            "seed": rec.seed,
            "confidence": h.confidence,
            "rotation_inlier_rate": h.rotation_inlier_rate,
            "transform": None,
            "scale": None,
            "nocs_png": path,
        }
        if h.transform is not None:
            entry["transform"] = h.transform.matrix().tolist()
            entry["scale"] = h.transform.scale
        return entry

    paths = nocs_paths or [None] * len(result.records)
    return {
        "best": {
            "hypothesis_index": result.best.index,
            "confidence": result.best.confidence,
            "scale": result.best.transform.scale,
            "transform": result.best.transform.matrix().tolist(),
        },
        "hypotheses": [hyp_entry(r, p) for r, p in zip(result.records, paths)],
        "seeds": result.seeds,
        "modalities": list(modalities),
        "noise_bound": result.noise_bound,
    }
