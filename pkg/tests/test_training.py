"""Training objective and optimizer."""

import numpy as np
import pytest

from nocspose.diffusion.schedule import make_schedule
from nocspose.diffusion.training import (AdamState, TrainConfig, TrainSample,
                                         loss_and_grads, optimizer_step)
from nocspose.diffusion.unet import ConditionSet, UNetConfig, UNetParams, init_params
from nocspose.geometry import GeometryError, NocsMap

CFG = UNetConfig(size=16, feat_dim=2, channels=(8, 16), blocks=1, groups=4,
                 sin_dim=8, time_dim=12, emb_dim=4, categories=2)


def make_batch(rng, n, size=16, feat_dim=2):
    batch = []
    for _ in range(n):
        mask = np.zeros((size, size), bool)
        mask[3:-3, 3:-3] = True
        vals = rng.uniform(0, 1, (size, size, 3)).astype(np.float32)
        vals[~mask] = 1.0
        batch.append(TrainSample(
            ConditionSet(normal=rng.uniform(-1, 1, (size, size, 3))
                         .astype(np.float32),
                         rgb=rng.uniform(0, 1, (size, size, 3))
                         .astype(np.float32),
                         feat=rng.uniform(0, 1, (size, size, feat_dim))
                         .astype(np.float32),
                         category=int(rng.integers(1, 3))),
            NocsMap(vals, mask)))
    return batch


class TestLoss:
    def test_zero_init_loss_near_one(self):
        # zero output head predicts zero noise, so the loss is the second
        # moment of a standard normal
        params = init_params(CFG, seed=0)
        sched = make_schedule(1000)
        rng = np.random.default_rng(0)
        losses = [loss_and_grads(params, make_batch(rng, 16), sched, 0.25,
                                 rng)[0] for _ in range(4)]
        assert np.mean(losses) == pytest.approx(1.0, rel=0.05)

    def test_full_drop_runs(self):
        params = init_params(CFG, seed=1)
        sched = make_schedule(1000)
        rng = np.random.default_rng(1)
        loss, grads = loss_and_grads(params, make_batch(rng, 4), sched,
                                     0.999999, rng)
        assert np.isfinite(loss)
        assert set(grads) == set(params.arrays)

    def test_empty_batch(self):
        params = init_params(CFG, seed=0)
        sched = make_schedule(1000)
        with pytest.raises(GeometryError, match="empty batch"):
            loss_and_grads(params, [], sched, 0.25, np.random.default_rng(0))

    def test_deterministic_given_rng_state(self):
        params = init_params(CFG, seed=2)
        sched = make_schedule(1000)
        rng = np.random.default_rng(5)
        batch = make_batch(np.random.default_rng(3), 4)
        l1, g1 = loss_and_grads(params, batch, sched, 0.25,
                                np.random.default_rng(7))
        l2, g2 = loss_and_grads(params, batch, sched, 0.25,
                                np.random.default_rng(7))
        assert l1 == l2
        for k in g1:
            assert g1[k].tobytes() == g2[k].tobytes()


class TestOptimizer:
    def _scalar_params(self, value=5.0):
        cfg = CFG
        p = UNetParams(cfg, {"x": np.array([value], dtype=np.float64)})
        return p

    def test_zero_gradient_no_change(self):
        params = init_params(CFG, seed=3)
        before = {k: v.copy() for k, v in params.arrays.items()}
        state = AdamState.init(params)
        grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        optimizer_step(params, grads, state, lr=1e-2)
        for k in before:
            np.testing.assert_array_equal(params.arrays[k], before[k])

    def test_quadratic_convergence(self):
        # minimize (x - 3)^2: must reach the optimum within 1e-6 in 2000
        # steps
        params = self._scalar_params(5.0)
        state = AdamState.init(params)
        for _ in range(2000):
            g = {"x": 2.0 * (params.arrays["x"] - 3.0)}
            optimizer_step(params, g, state, lr=1e-2)
        assert abs(params.arrays["x"][0] - 3.0) < 1e-6

    def test_layout_equivariance(self):
        # the same scalars in different array shapes update identically
        vals = np.arange(1.0, 13.0)
        grads_flat = np.linspace(-1.0, 1.0, 12)
        p1 = UNetParams(CFG, {"a": vals.copy()})
        p2 = UNetParams(CFG, {"a": vals.reshape(3, 4).copy()})
        s1, s2 = AdamState.init(p1), AdamState.init(p2)
        for _ in range(3):
            optimizer_step(p1, {"a": grads_flat.copy()}, s1, lr=1e-2)
            optimizer_step(p2, {"a": grads_flat.reshape(3, 4).copy()}, s2,
                           lr=1e-2)
        np.testing.assert_array_equal(p1.arrays["a"],
                                      p2.arrays["a"].reshape(-1))

    def test_divergence_detection(self):
        params = self._scalar_params()
        state = AdamState.init(params)
        with pytest.raises(FloatingPointError, match="divergence detected"):
            optimizer_step(params, {"x": np.array([np.nan])}, state, 1e-2)


def test_train_config_validation():
    with pytest.raises(GeometryError):
        TrainConfig(drop_rate=1.0)
    with pytest.raises(GeometryError):
        TrainConfig(size=30, channels=(8, 16, 32))
    cfg = TrainConfig()
    assert cfg.drop_rate == 0.25
    assert cfg.sched_steps == 1000
