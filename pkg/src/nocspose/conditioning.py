"""Shared condition preparation: masking, cropping to the model's square
input, and the dense feature channel.

Training and inference both route through these helpers so the network sees
the same distribution in both phases; in particular the normal condition is
always recomputed from depth at full resolution (not taken from rendered
geometric normals), matching what a real sensor provides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import (FeatureMap, PcaBasis, nearest_resize, pca_apply,
                       standin_features)
from .geometry import (BoundingBox, GeometryError, Intrinsics, NocsMap,
                       crop_nocs, crop_warp_resize, normals_from_depth)

WHITE = 1.0


@dataclass
class SquareView:
    """Model-input-sized crops of one observation."""

    rgb: np.ndarray | None      # S x S x 3, white background
    normals: np.ndarray | None  # S x S x 3 depth-derived, zero background
    mask: np.ndarray            # S x S bool
    bbox: BoundingBox


def mask_rgb(rgb: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.array(rgb, copy=True)
    out[~mask] = WHITE
    return out


def crop_observation(rgb: np.ndarray | None, depth: np.ndarray | None,
                     mask: np.ndarray, intr: Intrinsics, bbox: BoundingBox,
                     size: int, want_normals: bool) -> SquareView:
    """Mask backgrounds, then crop/warp/resize everything to size x size."""
    if not mask.any():
        raise GeometryError("empty mask")
    mask_sq = crop_warp_resize(mask, bbox, size, False, "nearest")
    rgb_sq = None
    if rgb is not None:
        rgb_sq = crop_warp_resize(mask_rgb(rgb, mask), bbox, size,
                                  WHITE, "bilinear")
        rgb_sq[~mask_sq] = WHITE
    normals_sq = None
    if want_normals:
        if depth is None:
            raise GeometryError("normal condition requires depth")
        normals = normals_from_depth(np.where(mask, depth, 0.0), intr)
        normals_sq = crop_warp_resize(normals, bbox, size, 0.0, "normals")
        normals_sq[~mask_sq] = 0.0
    return SquareView(rgb_sq, normals_sq, mask_sq, bbox)


def feature_condition(rgb_sq: np.ndarray, mask_sq: np.ndarray,
                      basis: PcaBasis, external: FeatureMap | None = None
                      ) -> np.ndarray:
    """PCA-compressed feature channel for a square crop.

    Features come from the stand-in extractor on the crop, or from an
    externally supplied map (resized to the crop with nearest neighbor).
    """
    size = mask_sq.shape[0]
    if external is not None:
        fm = nearest_resize(external, (size, size))
    else:
        if rgb_sq is None:
            raise GeometryError("feature condition requires an RGB image")
        fm = standin_features(rgb_sq)
    if not mask_sq.any():
        raise GeometryError("empty mask")
    return pca_apply(fm, basis, mask_sq).values


def crop_target_nocs(nocs: NocsMap, bbox: BoundingBox, size: int) -> NocsMap:
    return crop_nocs(nocs, bbox, size)
