"""Synthetic training data: viewpoint sampling, ray-cast rendering, and the
two training-time augmentations (in-plane rotation, Phong relighting).

Rendering happens in canonical units (object bbox diagonal = 1) on an orbit
of fixed radius; depth and camera translation are then scaled by the
object's metric diagonal so stored maps are in scene units.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import imgio
from .geometry import (GeometryError, Intrinsics, NocsMap, RigidPose,
                       renormalize_normals, sample_bilinear, sample_nearest)
from .shapes import Mesh

DEFAULT_RADIUS = 2.0  # orbit radius in canonical units (object diag = 1)


class DatasetError(RuntimeError):
    """Raised on missing or inconsistent dataset files."""


# ---------------------------------------------------------------------------
# viewpoints


def icosphere_directions(subdiv: int) -> np.ndarray:
    """Unit view directions at the vertices of a subdivided icosahedron.

    Each subdivision splits every edge at its midpoint and re-projects to
    the sphere, giving 10 * 4**subdiv + 2 vertices in deterministic order.
    """
    if subdiv < 0 or subdiv > 6:
        raise GeometryError("subdiv must be in [0, 6]")
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts / np.linalg.norm(verts, axis=1, keepdims=True))

    for _ in range(subdiv):
        midpoint: dict = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return np.asarray(verts)


def look_at_pose(direction: np.ndarray, radius: float,
                 world_up=(0.0, 1.0, 0.0)) -> RigidPose:
    """World-to-camera pose for a camera at radius*direction facing origin.

    Camera frame is x-right, y-down, z-forward. The image up vector follows
    world_up via Gram-Schmidt; when direction is parallel to world_up a
    fixed x-axis fallback is used.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    if radius <= 0:
        raise GeometryError("radius must be positive")
    center = radius * d
    forward = -d  # optical axis points at the origin
    up = np.asarray(world_up, dtype=np.float64)
    up = up - (up @ forward) * forward
    if np.linalg.norm(up) < 1e-8:
        up = np.array([1.0, 0.0, 0.0])
        up = up - (up @ forward) * forward
    up /= np.linalg.norm(up)
    y_cam = -up
    x_cam = np.cross(y_cam, forward)
    rot = np.stack([x_cam, y_cam, forward])
    return RigidPose(rot, -rot @ center)


@dataclass
class CameraRig:
    """Orbit of world-to-camera poses sharing one set of intrinsics."""

    poses: list
    intrinsics: Intrinsics
    radius: float

    def __post_init__(self):
        for p in self.poses:
            center = -p.rotation.T @ p.translation
            if abs(np.linalg.norm(center) - self.radius) > 1e-6:
                raise GeometryError("camera center off the orbit sphere")


def build_rig(subdiv: int, intr: Intrinsics,
              radius: float = DEFAULT_RADIUS) -> CameraRig:
    dirs = icosphere_directions(subdiv)
    poses = [look_at_pose(d, radius) for d in dirs]
    return CameraRig(poses, intr, radius)


# ---------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class PhongParams:
    ambient: float
    diffuse: float
    light_dir: tuple  # camera-frame direction light travels, unit length


BASELINE_LIGHT = PhongParams(ambient=0.6, diffuse=0.4,
                             light_dir=(-0.2425356250363330, -0.3395498750508662, 0.9095532144126237))


@dataclass
class AugmentParams:
    """Ranges for the two training-time augmentations."""

    angle_range: tuple = (0.0, 360.0)
    ambient_range: tuple = (0.3, 0.8)
    diffuse_range: tuple = (0.2, 0.7)

    def __post_init__(self):
        if self.ambient_range[1] + self.diffuse_range[1] > 1.5:
            raise GeometryError("ambient + diffuse maxima must be <= 1.5")
        for lo, hi in (self.angle_range, self.ambient_range, self.diffuse_range):
            if hi < lo:
                raise GeometryError("empty augmentation range")

    def draw_light(self, rng: np.random.Generator) -> PhongParams:
        ambient = rng.uniform(*self.ambient_range)
        diffuse = rng.uniform(*self.diffuse_range)
        # uniform on the camera-facing hemisphere (l_z >= 0)
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        v[2] = abs(v[2])
        return PhongParams(ambient, diffuse, tuple(v))

    def draw_angle(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(*self.angle_range))


@dataclass
class RenderOutput:
    """Synchronized channels of one rendered view plus camera metadata."""

    rgb: np.ndarray       # H x W x 3 in [0, 1], white background
    depth: np.ndarray     # H x W scene units, 0 = background
    mask: np.ndarray      # H x W bool
    normals: np.ndarray   # H x W x 3 camera frame, zero on background
    nocs_gt: NocsMap
    pose: RigidPose       # world->camera, translation in scene units
    diagonal_norm: float  # metric bbox diagonal of the source model
    category_id: int

    def __post_init__(self):
        if not np.array_equal(self.mask, self.depth > 0):
            raise GeometryError("mask must equal depth > 0")
        if not np.array_equal(self.mask, self.nocs_gt.mask):
            raise GeometryError("NOCS foreground must equal mask")


def _raycast(mesh: Mesh, origin: np.ndarray, dirs: np.ndarray,
             chunk: int = 8192):
    """Moller-Trumbore nearest-hit: returns (t, tri_index) per ray.

    t is the parameter along the (unnormalized) ray direction; misses get
    t = inf and index -1.
    """
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    tvec = origin[None, :] - v0          # (T, 3), shared ray origin
    qvec = np.cross(tvec, e1)            # (T, 3)
    t_num = np.einsum("tc,tc->t", e2, qvec)
    n_rays = dirs.shape[0]
    t_out = np.full(n_rays, np.inf)
    idx_out = np.full(n_rays, -1, dtype=np.int64)
    eps = 1e-12
    for start in range(0, n_rays, chunk):
        d = dirs[start:start + chunk]                       # (P, 3)
        pvec = np.cross(d[:, None, :], e2[None, :, :])      # (P, T, 3)
        det = np.einsum("tc,ptc->pt", e1, pvec)
        ok = np.abs(det) > eps
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = np.einsum("tc,ptc->pt", tvec, pvec) * inv_det
        v = np.einsum("pc,tc->pt", d, qvec) * inv_det
        t = t_num[None, :] * inv_det
        hit = ok & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1 + 1e-9) & (t > 1e-9)
        t = np.where(hit, t, np.inf)
        best = np.argmin(t, axis=1)
        tbest = t[np.arange(len(d)), best]
        t_out[start:start + chunk] = tbest
        idx_out[start:start + chunk] = np.where(np.isfinite(tbest), best, -1)
    return t_out, idx_out


def render_view(mesh: Mesh, cam: RigidPose, intr: Intrinsics,
                diagonal_norm: float, category_id: int,
                light: PhongParams = BASELINE_LIGHT) -> RenderOutput:
    """Ray-cast one view of a canonical mesh.

    Per pixel: nearest triangle hit gives depth (camera z), ground-truth
    NOCS (hit point + 0.5), the camera-facing geometric normal, and a
    Phong-shaded albedo. Background is white RGB, zero depth, white NOCS,
    zero normal.
    """
    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(us - intr.cx) / intr.fx,
                         (vs - intr.cy) / intr.fy,
                         np.ones_like(us)], axis=2).reshape(-1, 3)
    center = -cam.rotation.T @ cam.translation
    dirs_world = dirs_cam @ cam.rotation  # R^T applied row-wise

    t, tri = _raycast(mesh, center, dirs_world)
    hit = np.isfinite(t)
    if not hit.any():
        raise GeometryError("empty render")

    depth_canon = np.where(hit, t, 0.0).reshape(h, w)
    mask = depth_canon > 0

    points_world = center[None, :] + t[hit, None] * dirs_world[hit]
    nocs_vals = np.full((h * w, 3), 1.0)
    nocs_vals[hit] = np.clip(points_world + 0.5, 0.0, 1.0)

    # geometric per-triangle normals, oriented toward the camera
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    face_n = np.cross(e1, e2)
    face_n /= np.maximum(np.linalg.norm(face_n, axis=1, keepdims=True), 1e-12)
    n_world = face_n[tri[hit]]
    n_cam = n_world @ cam.rotation.T
    facing = np.einsum("pc,pc->p", n_cam, dirs_cam[hit]) > 0
    n_cam[facing] = -n_cam[facing]
    normals = np.zeros((h * w, 3))
    normals[hit] = n_cam

    shade = light.ambient + light.diffuse * np.maximum(
        0.0, -(n_cam @ np.asarray(light.light_dir)))
    rgb = np.ones((h * w, 3))
    rgb[hit] = np.clip(mesh.albedo[tri[hit]] * shade[:, None], 0.0, 1.0)

    pose_scene = RigidPose(cam.rotation, cam.translation * diagonal_norm)
    return RenderOutput(
        rgb=rgb.reshape(h, w, 3),
        depth=depth_canon * diagonal_norm,
        mask=mask,
        normals=normals.reshape(h, w, 3),
        nocs_gt=NocsMap(nocs_vals.reshape(h, w, 3), mask),
        pose=pose_scene,
        diagonal_norm=diagonal_norm,
        category_id=category_id,
    )


# ---------------------------------------------------------------------------
# augmentations


def phong_relight(rgb: np.ndarray, normals: np.ndarray, ambient: float,
                  diffuse: float, light_dir) -> np.ndarray:
    """Rescale foreground brightness with an ambient + diffuse Phong term.

    Foreground = pixels whose normal is nonzero; background is untouched.
    """
    if rgb.shape[:2] != normals.shape[:2]:
        raise GeometryError("rgb and normals size mismatch")
    l = np.asarray(light_dir, dtype=np.float64)
    fg = np.linalg.norm(normals, axis=2) > 0.5
    shade = ambient + diffuse * np.maximum(0.0, -(normals @ l))
    out = np.array(rgb, copy=True)
    out[fg] = np.clip(rgb[fg] * shade[fg, None], 0.0, 1.0)
    return out


def _rot2(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def _rotate_grid(shape, angle_deg: float):
    h, w = shape
    cv, cu = (h - 1) / 2.0, (w - 1) / 2.0
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    rot = _rot2(-angle_deg)
    du, dv = us - cu, vs - cv
    su = cu + rot[0, 0] * du + rot[0, 1] * dv
    sv = cv + rot[1, 0] * du + rot[1, 1] * dv
    return sv, su


def rotate_image(image: np.ndarray, angle_deg: float, fill,
                 kind: str = "nearest") -> np.ndarray:
    """Rotate about the image center; multiples of 90 deg are exact for
    nearest-neighbor sampling."""
    sv, su = _rotate_grid(image.shape[:2], angle_deg)
    if kind == "nearest":
        return sample_nearest(image, sv, su, fill)
    if kind == "bilinear":
        return sample_bilinear(image, sv, su, fill)
    raise GeometryError(f"unknown interpolation kind: {kind}")


def inplane_rotate(sample: RenderOutput, angle_deg: float) -> RenderOutput:
    """Roll the camera about its optical axis by angle_deg.

    All pixel grids rotate about the image center (nearest for mask/NOCS/
    depth, bilinear for RGB/normals); NOCS values are untouched, normal
    vectors co-rotate, and the stored pose is composed with the roll.
    """
    if sample.rgb.shape[0] != sample.rgb.shape[1]:
        raise GeometryError("in-plane rotation expects square images")
    rgb = rotate_image(sample.rgb, angle_deg, 1.0, "bilinear")
    depth = rotate_image(sample.depth, angle_deg, 0.0, "nearest")
    mask = rotate_image(sample.mask, angle_deg, False, "nearest")
    normals = renormalize_normals(
        rotate_image(sample.normals, angle_deg, 0.0, "bilinear"))
    rot2 = _rot2(angle_deg)
    normals[..., :2] = normals[..., :2] @ rot2.T
    nocs_vals = rotate_image(sample.nocs_gt.values, angle_deg, 1.0, "nearest")
    depth = np.where(mask, depth, 0.0)
    rz = np.eye(3)
    rz[:2, :2] = rot2
    pose = RigidPose(rz @ sample.pose.rotation, rz @ sample.pose.translation)
    return replace(sample, rgb=rgb, depth=depth, mask=mask, normals=normals,
                   nocs_gt=NocsMap(nocs_vals, mask), pose=pose)


# ---------------------------------------------------------------------------
# dataset IO


MANIFEST = "manifest.json"
CHANNELS = ("rgb", "depth", "normal", "nocs", "mask")


@dataclass
class Dataset:
    root: str
    manifest: dict

    @property
    def categories(self) -> list:
        return list(self.manifest["categories"])

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_dict(self.manifest["intrinsics"])

    def category_id(self, name: str) -> int:
        return int(self.manifest["category_ids"][name])

    def view_keys(self) -> list:
        keys = []
        for cat in self.categories:
            for m in range(self.manifest["models_per_category"]):
                for v in range(self.manifest["views_per_model"]):
                    keys.append((cat, m, v))
        return keys

    def view_paths(self, cat: str, model: int, view: int) -> dict:
        stem = os.path.join(self.root, cat, str(model), f"{view:04d}")
        paths = {ch: f"{stem}_{ch}.png" for ch in CHANNELS}
        paths["meta"] = f"{stem}_meta.json"
        return paths

    def load_view(self, cat: str, model: int, view: int) -> RenderOutput:
        p = self.view_paths(cat, model, view)
        for key, path in p.items():
            if not os.path.exists(path):
                raise DatasetError(f"missing dataset file: {path}")
        with open(p["meta"], "r", encoding="utf-8") as f:
            meta = json.load(f)
        depth = imgio.load_depth(p["depth"])
        mask = imgio.load_mask(p["mask"])
        nocs = imgio.load_nocs(p["nocs"], p["mask"])
        return RenderOutput(
            rgb=imgio.load_rgb(p["rgb"]).astype(np.float64),
            depth=np.where(mask, depth, 0.0),
            mask=mask,
            normals=imgio.load_normals(p["normal"]),
            nocs_gt=nocs,
            pose=RigidPose.from_matrix(np.asarray(meta["pose"])),
            diagonal_norm=float(meta["diagonal_norm"]),
            category_id=int(meta["category_id"]),
        )


def write_view(root: str, cat: str, model: int, view: int,
               out: RenderOutput) -> None:
    d = os.path.join(root, cat, str(model))
    os.makedirs(d, exist_ok=True)
    stem = os.path.join(d, f"{view:04d}")
    imgio.save_rgb(f"{stem}_rgb.png", out.rgb)
    imgio.save_depth(f"{stem}_depth.png", out.depth)
    imgio.save_normals(f"{stem}_normal.png", out.normals)
    imgio.save_nocs(f"{stem}_nocs.png", out.nocs_gt)
    imgio.save_mask(f"{stem}_mask.png", out.mask)
    meta = {
        "pose": [[float(x) for x in row] for row in out.pose.matrix().tolist()],
        "diagonal_norm": out.diagonal_norm,
        "category_id": out.category_id,
    }
    with open(f"{stem}_meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=1)


def write_manifest(root: str, manifest: dict) -> None:
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, MANIFEST), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)


def default_intrinsics(size: int) -> Intrinsics:
    """Focal length scaled so the object fills roughly half the frame at
    the default orbit radius (200 px at a 160 px image)."""
    f = 1.25 * size
    c = (size - 1) / 2.0
    return Intrinsics(f, f, c, c, size, size)


def generate_dataset(root: str, categories: list, models_per_category: int,
                     subdiv: int, size: int, seed: int = 0,
                     radius: float = DEFAULT_RADIUS,
                     mesh_dir: str | None = None,
                     progress=None) -> Dataset:
    """Render every (category, model, view) combination and write the
    dataset tree plus its manifest.

    Models come from the built-in procedural families, or from
    mesh_dir/<category>/*.obj when mesh_dir is given.
    """
    from . import shapes as shape_lib
    from .geometry import canonicalize_mesh

    intr = default_intrinsics(size)
    dirs = icosphere_directions(subdiv)
    category_ids = {c: i + 1 for i, c in enumerate(categories)}
    for ci, cat in enumerate(categories):
        for m in range(models_per_category):
            if mesh_dir is not None:
                objs = sorted(f for f in os.listdir(os.path.join(mesh_dir, cat))
                              if f.endswith(".obj"))
                if m >= len(objs):
                    raise DatasetError(
                        f"category '{cat}' has only {len(objs)} OBJ models, "
                        f"need {models_per_category}")
                mesh = shape_lib.load_obj(os.path.join(mesh_dir, cat, objs[m]))
            else:
                mesh = shape_lib.make_shape(cat, m, seed)
            verts, diag = canonicalize_mesh(mesh.vertices, mesh.triangles)
            mesh = mesh.with_vertices(verts)
            for vi, d in enumerate(dirs):
                pose = look_at_pose(d, radius)
                out = render_view(mesh, pose, intr, diagonal_norm=diag,
                                  category_id=category_ids[cat])
                write_view(root, cat, m, vi, out)
            if progress is not None:
                progress({"kind": "rendered", "category": cat, "model": m,
                          "views": len(dirs)})
    manifest = {
        "categories": list(categories),
        "category_ids": category_ids,
        "models_per_category": models_per_category,
        "views_per_model": len(dirs),
        "subdiv": subdiv,
        "intrinsics": intr.to_dict(),
        "radius": radius,
        "image_size": size,
        "seed": seed,
        "source": "obj" if mesh_dir else "builtin",
    }
    write_manifest(root, manifest)
    return Dataset(root, manifest)


def read_dataset(root: str) -> Dataset:
    path = os.path.join(root, MANIFEST)
    if not os.path.exists(path):
        raise DatasetError(f"missing manifest: {path}")
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    for key in ("categories", "category_ids", "models_per_category",
                "views_per_model", "intrinsics", "radius", "image_size"):
        if key not in manifest:
            raise DatasetError(f"manifest missing key '{key}': {path}")
    ds = Dataset(root, manifest)
    for cat in ds.categories:
        cdir = os.path.join(root, cat)
        if not os.path.isdir(cdir):
            raise DatasetError(f"missing category directory: {cdir}")
        n_models = len([d for d in os.listdir(cdir)
                        if os.path.isdir(os.path.join(cdir, d))])
        if n_models != manifest["models_per_category"]:
            raise DatasetError(
                f"category '{cat}' has {n_models} models, manifest says "
                f"{manifest['models_per_category']}")
    return ds
