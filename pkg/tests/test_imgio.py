"""PNG serialization conventions: quantization bounds and exact round trips."""

import numpy as np
import pytest

from nocspose import imgio
from nocspose.geometry import GeometryError, NocsMap


def test_rgb_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.uniform(size=(16, 16, 3))
    p = tmp_path / "x.png"
    imgio.save_rgb(p, rgb)
    back = imgio.load_rgb(p)
    assert np.abs(back - rgb).max() <= 0.5 / 255 + 1e-9


def test_depth_roundtrip_exact_at_millimeters(tmp_path):
    depth = np.array([[0.0, 0.001], [1.234, 65.535]])
    p = tmp_path / "d.png"
    imgio.save_depth(p, depth)
    back = imgio.load_depth(p)
    np.testing.assert_allclose(back, depth, atol=1e-12)
    assert back.dtype == np.float64


def test_depth_quantization_bound(tmp_path):
    rng = np.random.default_rng(1)
    depth = rng.uniform(0.1, 3.0, size=(8, 8))
    p = tmp_path / "d.png"
    imgio.save_depth(p, depth)
    assert np.abs(imgio.load_depth(p) - depth).max() <= 0.5e-3


def test_normals_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    n = rng.normal(size=(12, 12, 3))
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    n[0, :] = 0.0  # invalid row must survive exactly
    p = tmp_path / "n.png"
    imgio.save_normals(p, n)
    back = imgio.load_normals(p)
    assert np.all(back[0, :] == 0.0)
    valid = np.linalg.norm(n, axis=2) > 0
    # unit length restored exactly, direction within quantization
    np.testing.assert_allclose(np.linalg.norm(back[valid], axis=1), 1.0,
                               atol=1e-12)
    assert np.abs(back[valid] - n[valid]).max() < 2.0 / 255 * 2

def test_nocs_roundtrip_and_white_background(tmp_path):
    rng = np.random.default_rng(3)
    vals = rng.uniform(size=(10, 10, 3))
    mask = rng.uniform(size=(10, 10)) > 0.5
    nocs = NocsMap(vals, mask)
    p = tmp_path / "c.png"
    m = tmp_path / "m.png"
    imgio.save_nocs(p, nocs)
    imgio.save_mask(m, mask)
    back = imgio.load_nocs(p, m)
    np.testing.assert_array_equal(back.mask, mask)
    assert np.all(back.values[~mask] == 1.0)
    assert np.abs(back.values[mask] - vals[mask]).max() <= 0.5 / 255 + 1e-9


def test_mask_roundtrip(tmp_path):
    mask = np.zeros((6, 6), bool)
    mask[2:4, 1:5] = True
    p = tmp_path / "m.png"
    imgio.save_mask(p, mask)
    np.testing.assert_array_equal(imgio.load_mask(p), mask)


def test_nocs_size_mismatch_rejected(tmp_path):
    nocs = NocsMap(np.full((4, 4, 3), 0.5), np.ones((4, 4), bool))
    imgio.save_nocs(tmp_path / "c.png", nocs)
    imgio.save_mask(tmp_path / "m.png", np.ones((5, 5), bool))
    with pytest.raises(GeometryError):
        imgio.load_nocs(tmp_path / "c.png", tmp_path / "m.png")


def test_write_is_deterministic(tmp_path):
    rng = np.random.default_rng(4)
    rgb = rng.uniform(size=(16, 16, 3))
    imgio.save_rgb(tmp_path / "a.png", rgb)
    imgio.save_rgb(tmp_path / "b.png", rgb)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
