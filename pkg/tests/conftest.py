import numpy as np
import pytest

from nocspose.geometry import Intrinsics, canonicalize_mesh
from nocspose.shapes import make_shape
from nocspose.synthgen import look_at_pose, render_view


@pytest.fixture(scope="session")
def small_intrinsics():
    return Intrinsics(40.0, 40.0, 15.5, 15.5, 32, 32)


@pytest.fixture(scope="session")
def rendered_cup(small_intrinsics):
    """One 32x32 rendered view of a canonical procedural cup."""
    mesh = make_shape("cup", 0, seed=0)
    verts, diag = canonicalize_mesh(mesh.vertices, mesh.triangles)
    mesh = mesh.with_vertices(verts)
    d = np.array([0.4, 0.45, 0.8])
    pose = look_at_pose(d / np.linalg.norm(d), 2.0)
    return render_view(mesh, pose, small_intrinsics, diagonal_norm=diag,
                       category_id=1)


def random_rotation(rng):
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q
