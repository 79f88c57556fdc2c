"""Procedural shape families and ASCII OBJ loading.

Three built-in families keep the pipeline runnable without external assets:
a lathed cup with an optional side handle, a lathed bottle, and a laptop
made of two hinged slabs. All shapes use +y as the upright axis so a
handle-less cup/can is rotationally symmetric about y.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError


@dataclass
class Mesh:
    """Triangle mesh with flat per-triangle albedo in [0, 1]."""

    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    albedo: np.ndarray     # (T, 3) float64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(-1, 3)
        if self.triangles.shape[0] < 1:
            raise GeometryError("mesh needs at least one triangle")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise GeometryError("triangle index out of range")
        if self.albedo.shape[0] != self.triangles.shape[0]:
            raise GeometryError("albedo count must match triangle count")
        if self.albedo.min() < 0 or self.albedo.max() > 1:
            raise GeometryError("albedo outside [0, 1]")

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices, self.triangles, self.albedo)


def merge_meshes(parts: list[Mesh]) -> Mesh:
    verts, tris, albs = [], [], []
    offset = 0
    for p in parts:
        verts.append(p.vertices)
        tris.append(p.triangles + offset)
        albs.append(p.albedo)
        offset += len(p.vertices)
    return Mesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(albs))


def lathe(profile, n_seg: int, color, cap_bottom=True, cap_top=True) -> Mesh:
    """Surface of revolution about +y from (y, radius) profile pairs."""
    profile = np.asarray(profile, dtype=np.float64)
    angles = np.linspace(0.0, 2.0 * np.pi, n_seg, endpoint=False)
    cos, sin = np.cos(angles), np.sin(angles)
    rings = []
    for y, r in profile:
        rings.append(np.stack([r * cos, np.full(n_seg, y), r * sin], axis=1))
    verts = np.concatenate(rings)
    tris = []
    for i in range(len(profile) - 1):
        a = i * n_seg
        b = (i + 1) * n_seg
        for j in range(n_seg):
            k = (j + 1) % n_seg
            tris.append([a + j, b + j, b + k])
            tris.append([a + j, b + k, a + k])
    verts = [verts]
    base = len(profile) * n_seg
    if cap_bottom:
        verts.append(np.array([[0.0, profile[0, 0], 0.0]]))
        a = 0
        for j in range(n_seg):
            tris.append([base, a + (j + 1) % n_seg, a + j])
        base += 1
    if cap_top:
        verts.append(np.array([[0.0, profile[-1, 0], 0.0]]))
        a = (len(profile) - 1) * n_seg
        for j in range(n_seg):
            tris.append([base, a + j, a + (j + 1) % n_seg])
    tris = np.asarray(tris, dtype=np.int64)
    albedo = np.tile(np.asarray(color, dtype=np.float64), (len(tris), 1))
    return Mesh(np.concatenate(verts), tris, albedo)


def box(center, size, color) -> Mesh:
    cx, cy, cz = center
    hx, hy, hz = np.asarray(size, dtype=np.float64) / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-hx, hx) for sy in (-hy, hy)
                        for sz in (-hz, hz)])
    verts = corners + np.asarray(center, dtype=np.float64)
    # index bits: x*4 + y*2 + z
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris.append([a, b, c])
        tris.append([a, c, d])
    tris = np.asarray(tris, dtype=np.int64)
    albedo = np.tile(np.asarray(color, dtype=np.float64), (len(tris), 1))
    return Mesh(verts, tris, albedo)


def torus_arc(major: float, minor: float, arc: float, n_major: int,
              n_minor: int, color) -> Mesh:
    """Open torus segment in the x-y plane, swept from -arc/2 to +arc/2."""
    sweep = np.linspace(-arc / 2.0, arc / 2.0, n_major)
    ring = np.linspace(0.0, 2.0 * np.pi, n_minor, endpoint=False)
    verts = []
    for a in sweep:
        for b in ring:
            r = major + minor * np.cos(b)
            verts.append([r * np.cos(a), r * np.sin(a), minor * np.sin(b)])
    verts = np.asarray(verts)
    tris = []
    for i in range(n_major - 1):
        a = i * n_minor
        b = (i + 1) * n_minor
        for j in range(n_minor):
            k = (j + 1) % n_minor
            tris.append([a + j, b + j, b + k])
            tris.append([a + j, b + k, a + k])
    tris = np.asarray(tris, dtype=np.int64)
    albedo = np.tile(np.asarray(color, dtype=np.float64), (len(tris), 1))
    return Mesh(verts, tris, albedo)


def _hue_color(rng: np.random.Generator) -> np.ndarray:
    # moderately saturated random color, away from pure white (background)
    base = rng.uniform(0.15, 0.85, size=3)
    base[rng.integers(0, 3)] = rng.uniform(0.55, 0.95)
    return base


def make_cup(rng: np.random.Generator, with_handle: bool = True,
             n_seg: int = 24) -> Mesh:
    height = rng.uniform(0.8, 1.1)
    radius = rng.uniform(0.32, 0.42)
    body_color = _hue_color(rng)
    body = lathe([(-height / 2, radius * rng.uniform(0.85, 1.0)),
                  (0.0, radius), (height / 2, radius)], n_seg, body_color)
    if not with_handle:
        return body
    handle_color = _hue_color(rng)
    handle = torus_arc(major=height * rng.uniform(0.26, 0.32),
                       minor=radius * rng.uniform(0.16, 0.22),
                       arc=np.pi * 1.15, n_major=9, n_minor=8,
                       color=handle_color)
    # the arc lies in the x-y plane opening toward -x; shift it onto the wall
    # so it sticks out along +x
    hv = handle.vertices + np.array([radius * 0.95, 0.0, 0.0])
    return merge_meshes([body, handle.with_vertices(hv)])


def make_can(rng: np.random.Generator, n_seg: int = 24) -> Mesh:
    """Handle-less cylinder: rotationally symmetric about +y."""
    return make_cup(rng, with_handle=False, n_seg=n_seg)


def make_bottle(rng: np.random.Generator, n_seg: int = 24) -> Mesh:
    body_r = rng.uniform(0.26, 0.34)
    neck_r = body_r * rng.uniform(0.35, 0.5)
    h = rng.uniform(1.0, 1.3)
    shoulder = rng.uniform(0.55, 0.7) * h
    color = _hue_color(rng)
    profile = [(-h / 2, body_r * 0.92), (-h / 2 + 0.05 * h, body_r),
               (shoulder - h / 2, body_r), (shoulder - h / 2 + 0.12 * h, neck_r),
               (h / 2, neck_r)]
    return lathe(profile, n_seg, color)


def make_laptop(rng: np.random.Generator) -> Mesh:
    width = rng.uniform(0.9, 1.1)
    depth = rng.uniform(0.6, 0.75)
    thick = rng.uniform(0.035, 0.055)
    angle = np.deg2rad(rng.uniform(95.0, 125.0))
    base_color = _hue_color(rng)
    lid_color = _hue_color(rng)
    base = box((0.0, thick / 2, 0.0), (width, thick, depth), base_color)
    lid = box((0.0, depth / 2, 0.0), (width, depth, thick), lid_color)
    # hinge the lid at the back edge of the base (z = -depth/2), opening angle
    # measured from the base plane
    c, s = np.cos(angle - np.pi / 2), np.sin(angle - np.pi / 2)
    lv = lid.vertices.copy()
    y, z = lv[:, 1], lv[:, 2] - thick / 2
    lv[:, 1] = c * y - s * z
    lv[:, 2] = s * y + c * z
    lv[:, 2] -= depth / 2
    lv[:, 1] += thick
    return merge_meshes([base, lid.with_vertices(lv)])


SHAPE_FAMILIES = {
    "cup": make_cup,
    "can": make_can,
    "bottle": make_bottle,
    "laptop": make_laptop,
}

# target metric bbox diagonal in meters, per family
SIZE_RANGES = {
    "cup": (0.13, 0.18),
    "can": (0.12, 0.16),
    "bottle": (0.20, 0.30),
    "laptop": (0.35, 0.45),
}


def make_shape(category: str, model_index: int, seed: int = 0) -> Mesh:
    """Deterministic procedural model for (category, index), scaled so its
    bbox diagonal falls in the family's metric size range (meters)."""
    if category not in SHAPE_FAMILIES:
        raise GeometryError(f"unknown shape category: {category}; "
                            f"available: {sorted(SHAPE_FAMILIES)}")
    tag = zlib.crc32(category.encode("utf-8"))
    rng = np.random.default_rng([seed, tag, model_index])
    mesh = SHAPE_FAMILIES[category](rng)
    target = rng.uniform(*SIZE_RANGES[category])
    span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    diag = float(np.linalg.norm(span))
    return mesh.with_vertices(mesh.vertices * (target / diag))


def load_obj(path) -> Mesh:
    """Load an ASCII OBJ with vertices and triangular faces only."""
    verts, tris = [], []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{ln}: malformed vertex")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise GeometryError(
                        f"{path}:{ln}: only triangular faces are supported")
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                tris.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not tris:
        raise GeometryError(f"{path}: no faces found")
    albedo = np.tile([0.6, 0.6, 0.6], (len(tris), 1))
    return Mesh(np.asarray(verts), np.asarray(tris), albedo)
