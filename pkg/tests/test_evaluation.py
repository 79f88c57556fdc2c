"""Pose metrics: geodesic rotation error, symmetry-aware axis error, and
precision tables."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_rotation
from nocspose.evaluation import (EvalInstance, format_table,
                                 parse_thresholds, pose_errors,
                                 precision_table, scale_error,
                                 symmetric_axis_error)
from nocspose.geometry import GeometryError, RigidPose, SimilarityTransform


def sim(rot=None, t=(0, 0, 0), s=1.0):
    return SimilarityTransform(s, RigidPose(np.eye(3) if rot is None else rot,
                                            np.asarray(t, dtype=float)))


def rot_axis(axis, deg):
    axis = np.asarray(axis, dtype=float)
    axis /= np.linalg.norm(axis)
    a = np.deg2rad(deg)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * k @ k


class TestPoseErrors:
    def test_identical(self):
        r, t = pose_errors(sim(), sim())
        assert r == 0.0 and t == 0.0

    def test_half_turn(self):
        r, _ = pose_errors(sim(rot_axis([0, 0, 1], 180.0)), sim())
        assert r == pytest.approx(180.0, abs=1e-9)

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    @settings(max_examples=25, deadline=None)
    def test_quarter_turn_any_axis(self, x, y, z):
        v = np.array([x, y, z])
        if np.linalg.norm(v) < 1e-3:
            v = np.array([1.0, 0.0, 0.0])
        r, _ = pose_errors(sim(rot_axis(v, 90.0)), sim())
        assert r == pytest.approx(90.0, abs=1e-9)

    def test_translation_norm(self):
        _, t = pose_errors(sim(t=(3.0, 4.0, 0.0)), sim())
        assert t == pytest.approx(5.0)

    def test_metric_axioms(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b, c = (random_rotation(rng) for _ in range(3))
            dab, _ = pose_errors(sim(a), sim(b))
            dba, _ = pose_errors(sim(b), sim(a))
            dac, _ = pose_errors(sim(a), sim(c))
            dbc, _ = pose_errors(sim(b), sim(c))
            assert dab == pytest.approx(dba, abs=1e-6)
            assert dac <= dab + dbc + 1e-6

    def test_scale_error(self):
        assert scale_error(sim(s=1.1), sim(s=1.0)) == pytest.approx(0.1)


class TestSymmetricAxisError:
    def test_equal_axes(self):
        assert symmetric_axis_error(np.eye(3), np.eye(3)) == 0.0

    def test_antipodal_axes(self):
        flipped = rot_axis([1, 0, 0], 180.0)  # y -> -y
        assert symmetric_axis_error(flipped, np.eye(3)) \
            == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_and_midway(self):
        assert symmetric_axis_error(rot_axis([0, 0, 1], 90.0), np.eye(3)) \
            == pytest.approx(90.0, abs=1e-9)
        assert symmetric_axis_error(rot_axis([0, 0, 1], 45.0), np.eye(3)) \
            == pytest.approx(45.0, abs=1e-9)

    @given(st.floats(0, 360), st.floats(0, 360))
    @settings(max_examples=30, deadline=None)
    def test_invariant_to_y_spins(self, phi, psi):
        rng = np.random.default_rng(7)
        r_pred = random_rotation(rng)
        r_gt = random_rotation(rng)
        base = symmetric_axis_error(r_pred, r_gt)
        spun = symmetric_axis_error(r_pred @ rot_axis([0, 1, 0], phi),
                                    r_gt @ rot_axis([0, 1, 0], psi))
        assert spun == pytest.approx(base, abs=1e-9)


class TestPrecisionTable:
    THRESH = [(5.0, 0.05), (10.0, 0.05), (15.0, 0.05)]

    def test_all_perfect(self):
        inst = [EvalInstance(sim(), sim(), "cup") for _ in range(4)]
        table = precision_table(inst, self.THRESH)
        assert table.precision["cup"] == [1.0, 1.0, 1.0]
        assert table.mean_row == [1.0, 1.0, 1.0]

    def test_half_fail_translation(self):
        good = EvalInstance(sim(), sim(), "cup")
        bad = EvalInstance(sim(t=(1.0, 0, 0)), sim(), "cup")
        table = precision_table([good, bad], self.THRESH)
        assert table.precision["cup"] == [0.5, 0.5, 0.5]

    def test_symmetry_policy(self):
        spun = sim(rot_axis([0, 1, 0], 120.0))
        plain = EvalInstance(spun, sim(), "can", symmetry="none")
        symm = EvalInstance(spun, sim(), "can", symmetry="y-axis")
        t_plain = precision_table([plain], self.THRESH)
        t_symm = precision_table([symm], self.THRESH)
        assert t_plain.precision["can"] == [0.0, 0.0, 0.0]
        assert t_symm.precision["can"] == [1.0, 1.0, 1.0]

    def test_unweighted_mean(self):
        a = [EvalInstance(sim(), sim(), "cup") for _ in range(9)]
        b = [EvalInstance(sim(t=(1, 0, 0)), sim(), "laptop")]
        table = precision_table(a + b, [(5.0, 0.05)])
        assert table.mean_row == [0.5]

    @given(st.floats(1.0, 30.0), st.floats(5.0, 30.0),
           st.floats(0.01, 0.2), st.floats(0.0, 0.2))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_thresholds(self, d1, dd, t1, dt):
        rng = np.random.default_rng(3)
        inst = [EvalInstance(
            sim(rot_axis(rng.normal(size=3), rng.uniform(0, 40)),
                t=rng.normal(0, 0.05, 3)), sim(), "cup") for _ in range(12)]
        loose = precision_table(inst, [(d1 + dd, t1 + dt)])
        tight = precision_table(inst, [(d1, t1)])
        assert loose.mean_row[0] >= tight.mean_row[0]

    def test_empty_errors(self):
        with pytest.raises(GeometryError):
            precision_table([], self.THRESH)

    def test_bad_symmetry_kind(self):
        with pytest.raises(GeometryError):
            EvalInstance(sim(), sim(), "cup", symmetry="z-axis")


def test_parse_thresholds():
    ths = parse_thresholds("5:5,10:5,15:5", unit_scale=0.01)
    assert ths == [(5.0, 0.05), (10.0, 0.05), (15.0, 0.05)]
    with pytest.raises(GeometryError):
        parse_thresholds("5-5")
    with pytest.raises(GeometryError):
        parse_thresholds("")


def test_format_table_layout():
    inst = [EvalInstance(sim(), sim(), "cup"),
            EvalInstance(sim(), sim(), "laptop")]
    table = precision_table(inst, [(5.0, 0.05), (10.0, 0.05)])
    text = format_table(table)
    lines = text.strip().split("\n")
    assert lines[0].split()[:2] == ["category", "n"]
    assert "5deg 5cm" in lines[0]
    assert lines[-1].startswith("mean")
    assert len(lines) == 2 + 2 + 1  # header, rule, two categories, mean
