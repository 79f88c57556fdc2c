"""Reverse-process samplers: determinism, clamping, the one-step algebraic
identity with an oracle noise predictor, and distributional agreement of the
fast solver with ancestral sampling on a scalar toy problem.
"""

import numpy as np
import pytest
from scipy import stats

from nocspose.diffusion.sampling import fast_timesteps, run_sampler, sample
from nocspose.diffusion.schedule import make_schedule
from nocspose.diffusion.unet import ConditionSet, UNetConfig, init_params
from nocspose.geometry import GeometryError

CFG = UNetConfig(size=16, feat_dim=2, channels=(8, 16), blocks=1, groups=4,
                 sin_dim=8, time_dim=12, emb_dim=4, categories=2)


class TestTimesteps:
    def test_includes_endpoints(self):
        ks = fast_timesteps(1000, 10)
        assert ks[0] == 1000 and ks[-1] == 1
        assert np.all(np.diff(ks) < 0)

    def test_single_step(self):
        assert list(fast_timesteps(1000, 1)) == [1000]

    def test_full_grid(self):
        ks = fast_timesteps(50, 50)
        assert list(ks) == list(range(50, 0, -1))

    def test_out_of_range(self):
        with pytest.raises(GeometryError):
            fast_timesteps(100, 0)
        with pytest.raises(GeometryError):
            fast_timesteps(100, 101)


class TestOracleNetwork:
    def test_one_step_recovers_constant_target(self):
        # for the ideal predictor of a point mass at c, a single fast step
        # from any start returns exactly c
        sched = make_schedule(1000)
        c = 0.37

        def eps_fn(x, k):
            ab = sched.alpha_bar(k)
            return (x - np.sqrt(ab) * c) / np.sqrt(1.0 - ab)

        for steps in (1, 3, 10):
            out = run_sampler(eps_fn, (5,), sched, "fast", steps,
                              np.random.default_rng(0))
            np.testing.assert_allclose(out, c, atol=1e-9)

    def test_fast_vs_ancestral_distribution(self):
        # exact posterior noise predictor for x0 ~ N(mu, s2): both samplers
        # must produce the same output distribution (two-sample KS)
        sched = make_schedule(1000)
        mu, s2 = 0.3, 0.25

        def eps_fn(x, k):
            ab = sched.alpha_bar(k)
            denom = ab * s2 + (1.0 - ab)
            x0_hat = (np.sqrt(ab) * s2 * x + (1.0 - ab) * mu) / denom
            return (x - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)

        n = 2000
        anc = run_sampler(eps_fn, (n,), sched, "ancestral", 1000,
                          np.random.default_rng(1))
        fast = run_sampler(eps_fn, (n,), sched, "fast", 1000,
                           np.random.default_rng(2))
        assert abs(anc.mean() - mu) < 0.05
        assert abs(anc.var() - s2) < 0.05
        p = stats.ks_2samp(anc, fast).pvalue
        assert p > 0.01


class TestSample:
    def test_fast_deterministic(self):
        params = init_params(CFG, seed=0)
        sched = make_schedule(1000)
        cond = ConditionSet(category=1)
        a = sample(params, cond, sched, "fast", 10,
                   np.random.default_rng(42))
        b = sample(params, cond, sched, "fast", 10,
                   np.random.default_rng(42))
        assert a.values.tobytes() == b.values.tobytes()

    def test_output_range_and_mask(self):
        params = init_params(CFG, seed=1)
        sched = make_schedule(1000)
        mask = np.zeros((16, 16), bool)
        mask[4:12, 4:12] = True
        out = sample(params, ConditionSet(category=0), sched, "fast", 10,
                     np.random.default_rng(0), mask=mask)
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0
        np.testing.assert_array_equal(out.mask, mask)

    def test_ancestral_requires_all_steps(self):
        params = init_params(CFG, seed=1)
        sched = make_schedule(1000)
        with pytest.raises(GeometryError):
            sample(params, ConditionSet(), sched, "ancestral", 10,
                   np.random.default_rng(0))

    def test_unknown_mode(self):
        sched = make_schedule(1000)
        with pytest.raises(GeometryError, match="unknown sampling mode"):
            run_sampler(lambda x, k: x, (2,), sched, "turbo", 5,
                        np.random.default_rng(0))
