"""PNG serialization for the image channels the engine exchanges on disk.

Formats:
  RGB     8-bit RGB, value = round(v * 255) for v in [0, 1]
  depth   16-bit single channel, millimeters; 0 = invalid
  normals 8-bit RGB, value = round((n + 1) / 2 * 255); zero vectors decode
          back to zero via a norm threshold
  NOCS    8-bit RGB, value = round(n * 255); background exactly (255,255,255)
  mask    8-bit single channel in {0, 255}
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .geometry import GeometryError, NocsMap, renormalize_normals

DEPTH_UNIT = 1000.0  # stored millimeters per scene unit (meter)


def save_rgb(path, rgb: np.ndarray) -> None:
    arr = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_rgb(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def save_depth(path, depth: np.ndarray) -> None:
    mm = np.round(np.asarray(depth, dtype=np.float64) * DEPTH_UNIT)
    arr = np.clip(mm, 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def load_depth(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise GeometryError(f"depth PNG must be single channel: {path}")
    depth = arr / DEPTH_UNIT
    if depth.min() < 0 or not np.isfinite(depth).all():
        raise GeometryError(f"invalid depth values in {path}")
    return depth


def save_normals(path, normals: np.ndarray) -> None:
    arr = np.round((np.clip(normals, -1.0, 1.0) + 1.0) / 2.0 * 255.0)
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(path)


def load_normals(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    n = arr / 255.0 * 2.0 - 1.0
    return renormalize_normals(n)


def save_mask(path, mask: np.ndarray) -> None:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 127


def save_nocs(path, nocs: NocsMap) -> None:
    arr = np.round(np.clip(nocs.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    arr[~nocs.mask] = 255
    Image.fromarray(arr, mode="RGB").save(path)


def load_nocs(path, mask_path) -> NocsMap:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    mask = load_mask(mask_path)
    if mask.shape != arr.shape[:2]:
        raise GeometryError(f"mask size does not match NOCS map: {path}")
    return NocsMap(arr / 255.0, mask)
