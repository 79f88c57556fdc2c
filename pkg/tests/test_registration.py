"""Robust registration: closed-form alignment against constructed ground
truth, solver behavior under outliers, and the confidence contract.

The 100-instance sweep with the brute-force RANSAC oracle lives in
test_acceptance; here smaller constructed instances pin the behavior.
"""

import numpy as np
import pytest

from conftest import random_rotation
from nocspose.geometry import (GeometryError, Intrinsics, NocsMap, RigidPose,
                               SimilarityTransform)
from nocspose.registration import (CorrespondenceSet, PoseHypothesis,
                                   RobustParams, build_correspondences,
                                   default_noise_bound, inlier_rate,
                                   robust_register, umeyama)


def make_instance(seed, n=1000, out_frac=0.7, sigma=0.01, s=2.0,
                  t=(0.1, -0.2, 0.3)):
    rng = np.random.default_rng(seed)
    src = rng.uniform(-0.5, 0.5, (n, 3))
    rot = random_rotation(rng)
    t = np.asarray(t)
    dst = s * src @ rot.T + t + rng.normal(0, sigma, (n, 3))
    n_out = int(out_frac * n)
    out_idx = rng.choice(n, n_out, replace=False)
    lo, hi = dst.min(axis=0), dst.max(axis=0)
    dst[out_idx] = rng.uniform(lo, hi, (n_out, 3))
    inlier = np.ones(n, bool)
    inlier[out_idx] = False
    return CorrespondenceSet(src, dst), rot, t, s, inlier


def rot_err_deg(a, b):
    return np.degrees(np.arccos(np.clip((np.trace(a @ b.T) - 1) / 2, -1, 1)))


class TestUmeyama:
    def test_identity(self):
        rng = np.random.default_rng(0)
        src = rng.uniform(-1, 1, (4, 3))
        T = umeyama(src, src)
        assert T.scale == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(T.translation, 0.0, atol=1e-10)

    def test_constructed_ground_truth(self):
        # s=2, 90 degrees about z, t=(1,0,0)
        rng = np.random.default_rng(1)
        src = rng.uniform(-1, 1, (20, 3))
        rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        dst = 2.0 * src @ rz.T + np.array([1.0, 0.0, 0.0])
        T = umeyama(src, dst)
        assert abs(T.scale - 2.0) < 1e-9
        np.testing.assert_allclose(T.rotation, rz, atol=1e-9)
        np.testing.assert_allclose(T.translation, [1.0, 0.0, 0.0], atol=1e-9)

    def test_collinear_errors(self):
        src = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        with pytest.raises(GeometryError, match="degenerate"):
            umeyama(src, src * 2.0)

    def test_reflection_corrected(self):
        rng = np.random.default_rng(2)
        src = rng.uniform(-1, 1, (30, 3))
        rot = random_rotation(rng)
        dst = src @ rot.T
        T = umeyama(src, dst)
        assert np.linalg.det(T.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_local_optimality(self):
        # no nearby perturbation of the solution may reduce the residual
        rng = np.random.default_rng(3)
        src = rng.uniform(-1, 1, (50, 3))
        rot = random_rotation(rng)
        dst = 1.4 * src @ rot.T + rng.normal(0, 0.05, (50, 3))
        T = umeyama(src, dst)
        base = np.sum((dst - T.apply(src)) ** 2)
        for _ in range(100):
            ds = T.scale * (1.0 + rng.uniform(-0.01, 0.01))
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            ang = np.deg2rad(rng.uniform(-1.0, 1.0))
            kmat = np.array([[0, -axis[2], axis[1]],
                             [axis[2], 0, -axis[0]],
                             [-axis[1], axis[0], 0]])
            dr = (np.eye(3) + np.sin(ang) * kmat
                  + (1 - np.cos(ang)) * kmat @ kmat)
            dt = T.translation + rng.uniform(-0.01, 0.01, 3)
            pert = ds * (src @ (dr @ T.rotation).T) + dt
            assert np.sum((dst - pert) ** 2) >= base - 1e-12


class TestBuildCorrespondences:
    def _setup(self, n_px=40):
        intr = Intrinsics(50.0, 50.0, 15.5, 15.5, 32, 32)
        rng = np.random.default_rng(0)
        depth = np.zeros((32, 32))
        depth[8:24, 8:24] = rng.uniform(0.5, 1.5, (16, 16))
        mask = depth > 0
        vals = np.clip(rng.uniform(0, 1, (32, 32, 3)), 0, 1)
        nocs = NocsMap(vals, mask)
        return nocs, depth, mask, intr

    def test_subsample_deterministic(self):
        nocs, depth, mask, intr = self._setup()
        c1 = build_correspondences(nocs, depth, mask, intr, max_n=100,
                                   rng=np.random.default_rng(9))
        c2 = build_correspondences(nocs, depth, mask, intr, max_n=100,
                                   rng=np.random.default_rng(9))
        assert len(c1) == 100
        np.testing.assert_array_equal(c1.src, c2.src)
        np.testing.assert_array_equal(c1.pixels, c2.pixels)

    def test_src_range(self):
        nocs, depth, mask, intr = self._setup()
        c = build_correspondences(nocs, depth, mask, intr)
        assert c.src.min() >= -0.5 and c.src.max() <= 0.5

    def test_disjoint_masks_error(self):
        nocs, depth, mask, intr = self._setup()
        other = np.zeros_like(mask)
        other[0:2, 0:2] = True
        with pytest.raises(GeometryError, match="insufficient"):
            build_correspondences(nocs, depth, other, intr)


class TestInlierRate:
    def _exact(self, seed=0, n=50):
        rng = np.random.default_rng(seed)
        src = rng.uniform(-0.5, 0.5, (n, 3))
        rot = random_rotation(rng)
        T = SimilarityTransform(1.5, RigidPose(rot, np.array([0.1, 0.2, 0.3])))
        return CorrespondenceSet(src, T.apply(src)), T

    def test_exact_is_one(self):
        corrs, T = self._exact()
        assert inlier_rate(corrs, T, 0.01) == 1.0

    def test_shifted_is_zero(self):
        corrs, T = self._exact()
        shifted = SimilarityTransform(
            T.scale, RigidPose(T.rotation, T.translation + 10 * 0.01))
        assert inlier_rate(corrs, shifted, 0.01) == 0.0

    def test_half_perturbed(self):
        corrs, T = self._exact(n=200)
        dst = corrs.dst.copy()
        dst[:100] += 10 * 0.01
        rate = inlier_rate(CorrespondenceSet(corrs.src, dst), T, 0.01)
        assert abs(rate - 0.5) <= 1.0 / 200

    def test_monotone_in_added_inliers(self):
        corrs, T = self._exact(n=60)
        rng = np.random.default_rng(5)
        dst = corrs.dst.copy()
        dst[:40] += 1.0  # forced outliers
        base = inlier_rate(CorrespondenceSet(corrs.src, dst), T, 0.01)
        extra_src = rng.uniform(-0.5, 0.5, (30, 3))
        src2 = np.vstack([corrs.src, extra_src])
        dst2 = np.vstack([dst, T.apply(extra_src)])
        grown = inlier_rate(CorrespondenceSet(src2, dst2), T, 0.01)
        assert grown >= base


class TestRobustRegister:
    def test_noiseless_matches_umeyama(self):
        rng = np.random.default_rng(0)
        src = rng.uniform(-0.5, 0.5, (200, 3))
        rot = random_rotation(rng)
        T_true = SimilarityTransform(1.7, RigidPose(rot, np.array([0.3, 0, -0.2])))
        corrs = CorrespondenceSet(src, T_true.apply(src))
        hyp = robust_register(corrs, RobustParams(noise_bound=0.02, seed=0))
        ume = umeyama(corrs.src, corrs.dst)
        assert hyp.confidence == 1.0
        assert abs(hyp.transform.scale - ume.scale) < 1e-6
        assert rot_err_deg(hyp.transform.rotation, ume.rotation) < 1e-4
        np.testing.assert_allclose(hyp.transform.translation,
                                   ume.translation, atol=1e-6)

    def test_seventy_percent_outliers(self):
        corrs, rot, t, s, _ = make_instance(seed=12)
        hyp = robust_register(corrs, RobustParams(noise_bound=0.03, seed=12))
        assert abs(hyp.transform.scale - s) / s < 0.02
        assert rot_err_deg(hyp.transform.rotation, rot) < 2.0
        assert np.linalg.norm(hyp.transform.translation - t) < 0.02

    def test_all_outliers_low_confidence(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            src = rng.uniform(-0.5, 0.5, (500, 3))
            dst = rng.uniform(-1.0, 1.0, (500, 3))
            hyp = robust_register(CorrespondenceSet(src, dst),
                                  RobustParams(noise_bound=0.03, seed=seed))
            assert hyp.confidence < 0.1

    def test_order_invariance(self):
        corrs, *_ = make_instance(seed=4, n=300)
        hyp1 = robust_register(corrs, RobustParams(noise_bound=0.03, seed=7))
        perm = np.random.default_rng(0).permutation(len(corrs))
        shuffled = CorrespondenceSet(corrs.src[perm], corrs.dst[perm])
        hyp2 = robust_register(shuffled, RobustParams(noise_bound=0.03, seed=7))
        assert hyp1.transform.matrix().tobytes() \
            == hyp2.transform.matrix().tobytes()
        assert hyp1.confidence == hyp2.confidence

    def test_equivariance_under_extra_rigid_motion(self):
        rng = np.random.default_rng(8)
        src = rng.uniform(-0.5, 0.5, (200, 3))
        rot = random_rotation(rng)
        T_true = SimilarityTransform(1.3, RigidPose(rot, np.array([0.1, 0.2, 0.0])))
        dst = T_true.apply(src)
        q = random_rotation(rng)
        u = np.array([0.5, -0.3, 0.8])
        hyp1 = robust_register(CorrespondenceSet(src, dst),
                               RobustParams(noise_bound=0.01, seed=1))
        hyp2 = robust_register(CorrespondenceSet(src, dst @ q.T + u),
                               RobustParams(noise_bound=0.01, seed=1))
        np.testing.assert_allclose(hyp2.transform.rotation,
                                   q @ hyp1.transform.rotation, atol=1e-6)
        np.testing.assert_allclose(hyp2.transform.translation,
                                   q @ hyp1.transform.translation + u,
                                   atol=1e-6)
        assert abs(hyp2.transform.scale - hyp1.transform.scale) < 1e-6


def test_robust_params_validation():
    with pytest.raises(GeometryError):
        RobustParams(noise_bound=0.0)
    with pytest.raises(GeometryError):
        RobustParams(noise_bound=0.1, gnc_factor=1.0)


def test_pose_hypothesis_confidence_range():
    with pytest.raises(GeometryError):
        PoseHypothesis(None, 1.5)


def test_default_noise_bound():
    pts = np.array([[0.0, 0, 0], [1.0, 1, 1]])
    assert default_noise_bound(pts) == pytest.approx(0.02 * np.sqrt(3.0))
