"""Feature channel: PCA against a from-scratch Jacobi eigendecomposition
oracle, resizing, the deterministic stand-in extractor, and the external
feature file format.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nocspose.features import (FeatureMap, PcaBasis, nearest_resize,
                               pca_apply, pca_fit, pca_project,
                               read_feature_file, standin_features,
                               write_feature_file)
from nocspose.geometry import GeometryError


def jacobi_eig(a: np.ndarray, sweeps: int = 60):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix (oracle)."""
    a = a.copy()
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt((a ** 2).sum() - (np.diag(a) ** 2).sum())
        if off < 1e-14:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-18:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta ** 2 + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t ** 2 + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a).copy(), v


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angles between the subspaces spanned by the rows of a and b."""
    qa, _ = np.linalg.qr(a.T)
    qb, _ = np.linalg.qr(b.T)
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(sv, -1.0, 1.0))


class TestPcaFit:
    def test_line_instance(self):
        # points t*(1,2,0): first component must align with (1,2,0)/sqrt(5)
        # and carry all the variance
        t = np.arange(-2.0, 3.0)
        rows = t[:, None] * np.array([1.0, 2.0, 0.0])
        basis = pca_fit(rows, 2)
        direction = np.array([1.0, 2.0, 0.0]) / np.sqrt(5.0)
        np.testing.assert_allclose(basis.components[0], direction, atol=1e-12)
        assert basis.variances[1] == pytest.approx(0.0, abs=1e-12)

    def test_full_rank_roundtrip(self):
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(40, 5))
        basis = pca_fit(rows, 5)
        proj = pca_project(rows, basis)
        recon = proj @ basis.components + basis.mean
        np.testing.assert_allclose(recon, rows, atol=1e-8)

    def test_identical_rows_deterministic(self):
        rows = np.tile([1.0, 2.0, 3.0, 4.0], (10, 1))
        b1 = pca_fit(rows, 2)
        b2 = pca_fit(rows, 2)
        np.testing.assert_allclose(b1.variances, 0.0, atol=1e-12)
        np.testing.assert_array_equal(b1.components, b2.components)

    def test_invalid_m(self):
        rows = np.zeros((4, 3))
        with pytest.raises(GeometryError):
            pca_fit(rows, 4)
        with pytest.raises(GeometryError):
            pca_fit(np.zeros((2, 8)), 3)

    def test_against_jacobi_oracle(self):
        # acceptance-style check at reduced count; the full 50-instance
        # sweep lives in test_acceptance
        rng = np.random.default_rng(7)
        for trial in range(10):
            d = int(rng.integers(3, 17))
            n = int(rng.integers(d + 5, 200))
            m = int(rng.integers(1, d + 1))
            rows = rng.normal(size=(n, d)) * rng.uniform(0.1, 3.0, size=d)
            basis = pca_fit(rows, m)
            xc = rows - rows.mean(axis=0)
            cov = xc.T @ xc / (n - 1)
            evals, evecs = jacobi_eig(cov)
            order = np.argsort(evals)[::-1]
            gap_ok = m == d or (evals[order][m - 1] - evals[order][m]
                                > 1e-6 * evals[order][0])
            if not gap_ok:
                continue
            oracle = evecs[:, order[:m]].T
            assert principal_angles(basis.components, oracle).max() < 1e-6
            np.testing.assert_allclose(basis.variances, evals[order][:m],
                                       rtol=1e-8, atol=1e-10)

    def test_projected_variance_equals_eigenvalues(self):
        rng = np.random.default_rng(3)
        rows = rng.normal(size=(300, 8)) * np.linspace(3.0, 0.2, 8)
        basis = pca_fit(rows, 4)
        proj = pca_project(rows, basis)
        var = proj.var(axis=0, ddof=1)
        np.testing.assert_allclose(var, basis.variances, rtol=1e-8)
        assert abs(var.sum() - basis.variances.sum()) < 1e-8 * var.sum()


class TestPcaApply:
    def test_mean_pixel_projects_to_zero(self):
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(50, 6))
        basis = pca_fit(rows, 3)
        np.testing.assert_allclose(pca_project(basis.mean[None], basis),
                                   0.0, atol=1e-10)

    def test_channel_variance_non_increasing(self):
        rng = np.random.default_rng(2)
        fm = FeatureMap(rng.normal(size=(16, 16, 8)).astype(np.float32))
        rows = fm.values.reshape(-1, 8)
        basis = pca_fit(rows, 4)
        proj = pca_project(rows, basis)
        var = proj.var(axis=0)
        assert np.all(np.diff(var) <= 1e-9)

    def test_isometry_roundtrip_distances(self):
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(30, 6))
        basis = pca_fit(rows, 6)
        proj = pca_project(rows, basis)
        d_in = np.linalg.norm(rows[:, None] - rows[None, :], axis=2)
        d_out = np.linalg.norm(proj[:, None] - proj[None, :], axis=2)
        np.testing.assert_allclose(d_out, d_in, atol=1e-6)

    def test_rescale_and_background(self):
        rng = np.random.default_rng(6)
        fm = FeatureMap(rng.normal(size=(8, 8, 5)).astype(np.float32))
        basis = pca_fit(fm.values.reshape(-1, 5), 2)
        fg = np.zeros((8, 8), bool)
        fg[2:6, 2:6] = True
        out = pca_apply(fm, basis, fg)
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0
        assert np.all(out.values[~fg] == 0.0)
        assert out.values[fg].max() == pytest.approx(1.0, abs=1e-6)

    def test_dimension_mismatch(self):
        fm = FeatureMap(np.zeros((4, 4, 3), np.float32))
        basis = pca_fit(np.random.default_rng(0).normal(size=(10, 5)), 2)
        with pytest.raises(GeometryError):
            pca_apply(fm, basis)


class TestNearestResize:
    def test_identity(self):
        rng = np.random.default_rng(0)
        fm = FeatureMap(rng.normal(size=(7, 9, 2)).astype(np.float32))
        out = nearest_resize(fm, (7, 9))
        np.testing.assert_array_equal(out.values, fm.values)

    def test_upsample_blocks(self):
        fm = FeatureMap(np.arange(4, dtype=np.float32).reshape(2, 2, 1))
        out = nearest_resize(fm, (4, 4))
        expected = np.repeat(np.repeat(fm.values, 2, axis=0), 2, axis=1)
        np.testing.assert_array_equal(out.values, expected)

    @given(st.integers(1, 20), st.integers(1, 20))
    @settings(max_examples=25, deadline=None)
    def test_value_containment_and_idempotence(self, h, w):
        rng = np.random.default_rng(42)
        fm = FeatureMap(rng.normal(size=(6, 5, 3)).astype(np.float32))
        out = nearest_resize(fm, (h, w))
        assert set(out.values.reshape(-1).tolist()) \
            <= set(fm.values.reshape(-1).tolist())
        again = nearest_resize(out, (h, w))
        np.testing.assert_array_equal(again.values, out.values)


class TestStandin:
    def test_constant_image_constant_features(self):
        rgb = np.full((12, 12, 3), 0.3)
        fm = standin_features(rgb)
        assert fm.dim == 32
        spread = fm.values.max(axis=(0, 1)) - fm.values.min(axis=(0, 1))
        assert spread.max() < 1e-5

    def test_mirror_equivariance_of_symmetric_channels(self):
        rng = np.random.default_rng(4)
        rgb = rng.uniform(size=(16, 16, 3))
        f = standin_features(rgb).values
        f_m = standin_features(rgb[:, ::-1]).values
        # raw opponents, blurs, and 0/90-degree energy channels mirror;
        # 45/135-degree channels swap instead
        sym = [0, 1] + [2 + 15 * s + 5 * c + k for s in range(2)
                        for c in range(3) for k in (0, 1, 3)]
        np.testing.assert_allclose(f_m[:, :, sym], f[:, ::-1, sym],
                                   atol=1e-10)

    def test_bit_identical_reruns(self):
        rng = np.random.default_rng(9)
        rgb = rng.uniform(size=(10, 10, 3))
        a = standin_features(rgb)
        b = standin_features(rgb)
        assert a.values.tobytes() == b.values.tobytes()


class TestFeatureFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        fm = FeatureMap(rng.normal(size=(5, 7, 4)).astype(np.float32))
        path = tmp_path / "f.bin"
        write_feature_file(path, fm)
        back = read_feature_file(path)
        np.testing.assert_array_equal(back.values, fm.values)
        assert back.provenance == "external file"
        assert path.stat().st_size == 16 + 5 * 7 * 4 * 4

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + b"\0" * 12)
        with pytest.raises(GeometryError, match="not a feature file"):
            read_feature_file(p)

    def test_truncated(self, tmp_path):
        fm = FeatureMap(np.zeros((4, 4, 2), np.float32))
        p = tmp_path / "t.bin"
        write_feature_file(p, fm)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(GeometryError, match="truncated"):
            read_feature_file(p)


def test_pca_basis_validation():
    with pytest.raises(GeometryError):
        PcaBasis(np.zeros(3), np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                 np.array([1.0, 0.5]))
    with pytest.raises(GeometryError):
        PcaBasis(np.zeros(3), np.eye(3)[:2], np.array([0.5, 1.0]))
