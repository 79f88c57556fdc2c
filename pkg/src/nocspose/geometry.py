"""Camera geometry, canonical object coordinates, and image warping.

Conventions shared by every module in this package:

* pixel (u, v): u is the column index, v the row index; arrays index [v, u]
* depth maps are H x W floats in scene units (meters by default); an exact 0
  marks an invalid pixel
* normal maps are H x W x 3 camera-frame unit vectors, zero where undefined;
  visible surfaces face the camera (n_z < 0)
* canonical objects are centered with unit bounding-box diagonal, so every
  surface point lies in [-0.5, 0.5]^3 and its NOCS value is the point + 0.5
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-6
_WHITE = 1.0  # serialized NOCS/RGB background


class GeometryError(ValueError):
    """Raised when a geometric precondition is violated."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside image")

    def scaled(self, factor: float) -> "Intrinsics":
        return Intrinsics(self.fx * factor, self.fy * factor,
                          self.cx * factor, self.cy * factor,
                          int(round(self.width * factor)),
                          int(round(self.height * factor)))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_dict(d: dict) -> "Intrinsics":
        return Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]),
                          float(d["cy"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rigid transform: p_cam = R @ p_world + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise GeometryError("rotation must be 3x3")
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHO_TOL:
            raise GeometryError("rotation not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise GeometryError("rotation determinant != +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidPose":
        m = np.asarray(m, dtype=np.float64)
        return RigidPose(m[:3, :3], m[:3, 3])


@dataclass(frozen=True)
class SimilarityTransform:
    """Scaled rigid map: p_out = scale * R @ p_in + t."""

    scale: float
    pose: RigidPose

    def __post_init__(self):
        if not self.scale > 0:
            raise GeometryError("scale must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose.rotation

    @property
    def translation(self) -> np.ndarray:
        return self.pose.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (points @ self.rotation.T) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass
class NocsMap:
    """Dense canonical-coordinate image with a foreground mask.

    values: H x W x 3 in [0, 1]; mask: H x W bool. Background pixels are
    written as white (1, 1, 1) when serialized; the in-memory values of
    background pixels are not otherwise meaningful.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        m = np.asarray(self.mask, dtype=bool)
        if v.ndim != 3 or v.shape[2] != 3 or m.shape != v.shape[:2]:
            raise GeometryError("NocsMap shape mismatch")
        if not np.isfinite(v).all():
            raise GeometryError("NocsMap values must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise GeometryError("NocsMap values outside [0, 1]")
        self.values = v
        self.mask = m

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    def foreground_points(self) -> np.ndarray:
        return self.values[self.mask]


@dataclass(frozen=True)
class BoundingBox:
    """Square detection box: center (cu, cv) in pixels and side length."""

    cu: float
    cv: float
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise GeometryError("bounding box side must be positive")


@dataclass
class PointCloud:
    """3D points with optional (v, u) source-pixel bookkeeping."""

    points: np.ndarray
    pixels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(p).all():
            raise GeometryError("point cloud contains non-finite values")
        self.points = p
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return self.points.shape[0]


def bbox_from_mask(mask: np.ndarray, margin: float = 1.05) -> BoundingBox:
    """Square box containing the mask under any in-plane rotation.

    Side = diagonal of the tight extent times margin, so a rotated crop of
    the same object still fits.
    """
    vs, us = np.nonzero(mask)
    if vs.size == 0:
        raise GeometryError("empty mask")
    cv = (vs.min() + vs.max()) / 2.0
    cu = (us.min() + us.max()) / 2.0
    ext_v = float(vs.max() - vs.min() + 1)
    ext_u = float(us.max() - us.min() + 1)
    side = float(np.hypot(ext_u, ext_v)) * margin
    return BoundingBox(cu=cu, cv=cv, side=side)


# ---------------------------------------------------------------------------
# canonicalization


def canonicalize_mesh(vertices: np.ndarray, triangles: np.ndarray):
    """Center a mesh at its bbox center and scale its bbox diagonal to 1.

    Returns (canonical_vertices, diagonal_norm) where diagonal_norm is the
    original diagonal length in input units. NOCS coordinates of canonical
    points are point + 0.5.
    """
    v = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int64)
    if tris.size == 0:
        raise GeometryError("degenerate geometry")
    if not np.isfinite(v).all():
        raise GeometryError("non-finite vertices")
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag < 1e-12:
        raise GeometryError("degenerate geometry")
    center = (lo + hi) / 2.0
    return (v - center) / diag, diag


# ---------------------------------------------------------------------------
# depth geometry


def backproject(depth: np.ndarray, intr: Intrinsics,
                mask: np.ndarray | None = None) -> PointCloud:
    """Lift masked valid depth pixels into camera-frame 3D points."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise GeometryError("depth size does not match intrinsics")
    valid = depth > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    vs, us = np.nonzero(valid)
    if vs.size == 0:
        raise GeometryError("empty cloud")
    z = depth[vs, us]
    x = z * (us - intr.cx) / intr.fx
    y = z * (vs - intr.cy) / intr.fy
    return PointCloud(np.stack([x, y, z], axis=1), np.stack([vs, us], axis=1))


def project(points: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Project camera-frame points to (u, v) pixel coordinates."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u = intr.fx * p[:, 0] / p[:, 2] + intr.cx
    v = intr.fy * p[:, 1] / p[:, 2] + intr.cy
    return np.stack([u, v], axis=1)


def _grid_points(depth: np.ndarray, intr: Intrinsics) -> np.ndarray:
    us = np.arange(intr.width, dtype=np.float64)
    vs = np.arange(intr.height, dtype=np.float64)
    x = depth * (us[None, :] - intr.cx) / intr.fx
    y = depth * (vs[:, None] - intr.cy) / intr.fy
    return np.stack([x, y, depth], axis=2)


def normals_from_depth(depth: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Camera-facing surface normals from central depth differences.

    A pixel gets the normalized cross product of the backprojected
    horizontal and vertical neighbor differences. Pixels on the border or
    adjacent to invalid depth become the zero vector. Output is invariant
    to uniform depth rescaling.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise GeometryError("depth size does not match intrinsics")
    pts = _grid_points(depth, intr)
    valid = depth > 0
    h, w = depth.shape
    normals = np.zeros((h, w, 3), dtype=np.float64)
    if h < 3 or w < 3:
        return normals

    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    ok = (valid[1:-1, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2]
          & valid[2:, 1:-1] & valid[:-2, 1:-1])
    norm = np.linalg.norm(n, axis=2)
    ok &= norm > 1e-12
    n = np.divide(n, norm[:, :, None], out=np.zeros_like(n),
                  where=norm[:, :, None] > 0)
    # orient toward the camera: n . ray < 0 with ray = point direction
    flip = np.einsum("vuc,vuc->vu", n, pts[1:-1, 1:-1]) > 0
    n[flip] = -n[flip]
    n[~ok] = 0.0
    normals[1:-1, 1:-1] = n
    return normals


# ---------------------------------------------------------------------------
# warping


def _affine_grid(bbox: BoundingBox, out_size: int):
    # output pixel q maps to source pixel bbox.center + (q - out_center) * step
    step = bbox.side / out_size
    q = np.arange(out_size, dtype=np.float64) - (out_size - 1) / 2.0
    su = bbox.cu + q * step
    sv = bbox.cv + q * step
    return np.broadcast_to(sv[:, None], (out_size, out_size)), \
        np.broadcast_to(su[None, :], (out_size, out_size))


def _as_hwc(image: np.ndarray):
    image = np.asarray(image)
    if image.ndim == 2:
        return image[:, :, None], True
    return image, False


def sample_nearest(image: np.ndarray, sv: np.ndarray, su: np.ndarray, fill):
    img, squeeze = _as_hwc(image)
    h, w, c = img.shape
    iv = np.rint(sv).astype(np.int64)
    iu = np.rint(su).astype(np.int64)
    inside = (iv >= 0) & (iv < h) & (iu >= 0) & (iu < w)
    out = np.empty(sv.shape + (c,), dtype=img.dtype)
    out[...] = np.asarray(fill, dtype=img.dtype)
    out[inside] = img[iv[inside], iu[inside]]
    return out[:, :, 0] if squeeze else out


def sample_bilinear(image: np.ndarray, sv: np.ndarray, su: np.ndarray, fill):
    img, squeeze = _as_hwc(image)
    h, w, c = img.shape
    fillv = np.broadcast_to(np.asarray(fill, dtype=np.float64), (c,))
    v0 = np.floor(sv).astype(np.int64)
    u0 = np.floor(su).astype(np.int64)
    fv = (sv - v0)[..., None]
    fu = (su - u0)[..., None]
    out = np.zeros(sv.shape + (c,), dtype=np.float64)
    for dv, wv in ((0, 1.0 - fv), (1, fv)):
        for du, wu in ((0, 1.0 - fu), (1, fu)):
            vv = v0 + dv
            uu = u0 + du
            inside = (vv >= 0) & (vv < h) & (uu >= 0) & (uu < w)
            tap = np.where(inside[..., None],
                           img[vv.clip(0, h - 1), uu.clip(0, w - 1)], fillv)
            out += wv * wu * tap
    out = out.astype(img.dtype if np.issubdtype(img.dtype, np.floating)
                     else np.float64)
    return out[:, :, 0] if squeeze else out


def renormalize_normals(normals: np.ndarray, min_norm: float = 0.5) -> np.ndarray:
    """Unit-normalize vectors, snapping near-zero (invalid) ones to zero."""
    n = np.linalg.norm(normals, axis=-1, keepdims=True)
    out = np.where(n > min_norm, normals / np.maximum(n, 1e-12), 0.0)
    return out.astype(normals.dtype)


def crop_warp_resize(image: np.ndarray, bbox: BoundingBox, out_size: int,
                     fill, kind: str = "nearest") -> np.ndarray:
    """Crop a square bbox, recenter it, and resize to out_size x out_size.

    kind: "nearest" (masks, NOCS, features), "bilinear" (RGB), or
    "normals" (bilinear + renormalize). The bbox center lands on the output
    center; samples outside the source get `fill`.
    """
    if out_size <= 0:
        raise GeometryError("out_size must be positive")
    if bbox.side <= 0:
        raise GeometryError("bounding box side must be positive")
    sv, su = _affine_grid(bbox, out_size)
    if kind == "nearest":
        return sample_nearest(image, sv, su, fill)
    if kind == "bilinear":
        return sample_bilinear(image, sv, su, fill)
    if kind == "normals":
        return renormalize_normals(sample_bilinear(image, sv, su, fill))
    raise GeometryError(f"unknown interpolation kind: {kind}")


def crop_nocs(nocs: NocsMap, bbox: BoundingBox, out_size: int) -> NocsMap:
    values = crop_warp_resize(nocs.values, bbox, out_size, _WHITE, "nearest")
    mask = crop_warp_resize(nocs.mask, bbox, out_size, False, "nearest")
    return NocsMap(values, mask)


def unwarp_nocs(nocs_square: NocsMap, bbox: BoundingBox,
                orig_size: tuple) -> NocsMap:
    """Invert crop_warp_resize for a square NOCS map.

    Pixels outside the bbox (or sampling outside the square) become
    background. The round trip crop -> unwarp is exact when bbox.side equals
    the square size and the bbox is integer-aligned.
    """
    if bbox.side <= 0:
        raise GeometryError("bounding box side must be positive")
    s = nocs_square.mask.shape[0]
    if nocs_square.mask.shape[0] != nocs_square.mask.shape[1]:
        raise GeometryError("nocs_square must be square")
    h, w = orig_size
    scale = s / bbox.side
    vs = (np.arange(h, dtype=np.float64) - bbox.cv) * scale + (s - 1) / 2.0
    us = (np.arange(w, dtype=np.float64) - bbox.cu) * scale + (s - 1) / 2.0
    qv = np.broadcast_to(vs[:, None], (h, w))
    qu = np.broadcast_to(us[None, :], (h, w))
    values = sample_nearest(nocs_square.values, qv, qu, _WHITE)
    mask = sample_nearest(nocs_square.mask, qv, qu, False)
    return NocsMap(values, mask)
