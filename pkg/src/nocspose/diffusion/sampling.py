"""Reverse-process samplers: stochastic ancestral sampling and the fast
first-order deterministic solver used at inference (10 steps by default).
"""

from __future__ import annotations

import numpy as np

from ..geometry import GeometryError, NocsMap
from .schedule import NoiseSchedule, diffusion_to_nocs
from .unet import ConditionSet, UNetParams, build_cond_batch, unet_forward


def fast_timesteps(num_steps: int, steps: int) -> np.ndarray:
    """Uniform descending sub-grid of timesteps, always containing K and 1."""
    if steps < 1 or steps > num_steps:
        raise GeometryError("steps out of range")
    if steps == 1:
        return np.array([num_steps], dtype=np.int64)
    grid = np.linspace(num_steps, 1, steps)
    ks = np.unique(np.rint(grid).astype(np.int64))[::-1]
    return ks


def run_sampler(eps_fn, shape: tuple, sched: NoiseSchedule, mode: str,
                steps: int, rng: np.random.Generator,
                clip_x0: float | None = 1.0) -> np.ndarray:
    """Drive the reverse process with an arbitrary noise predictor.

    eps_fn(x, k) -> predicted noise for a single sample of the given shape.
    The implied clean-signal estimate is clipped to [-clip_x0, clip_x0] at
    every step (the data lives in [-1, 1]); this keeps few-step
    trajectories from diverging in the near-pure-noise regime where the
    noise predictor carries almost no signal. Returns the final x0 estimate
    (unclamped beyond that per-step clip).
    """

    def x0_from_eps(x, eps, abar):
        x0 = (x - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)
        if clip_x0 is not None:
            x0 = np.clip(x0, -clip_x0, clip_x0)
        return x0

    x = rng.standard_normal(shape)
    if mode == "ancestral":
        if steps != sched.num_steps:
            raise GeometryError("ancestral mode runs all K steps")
        for k in range(sched.num_steps, 0, -1):
            eps = eps_fn(x, k)
            abar = sched.alpha_bar(k)
            abar_prev = sched.alpha_bar(k - 1)
            beta = sched.beta(k)
            x0 = x0_from_eps(x, eps, abar)
            # posterior mean of x_{k-1} given (x_k, x0)
            mean = (np.sqrt(abar_prev) * beta * x0
                    + np.sqrt(sched.alpha(k)) * (1.0 - abar_prev) * x) \
                / (1.0 - abar)
            if k > 1:
                var = (1.0 - abar_prev) / (1.0 - abar) * beta
                x = mean + np.sqrt(var) * rng.standard_normal(shape)
            else:
                x = mean
        return x
    if mode == "fast":
        ks = fast_timesteps(sched.num_steps, steps)
        for i, k in enumerate(ks):
            eps = eps_fn(x, int(k))
            abar = sched.alpha_bar(int(k))
            x0 = x0_from_eps(x, eps, abar)
            if i + 1 < len(ks):
                abar_next = sched.alpha_bar(int(ks[i + 1]))
                x = np.sqrt(abar_next) * x0 + np.sqrt(1.0 - abar_next) * eps
            else:
                x = x0
        return x
    raise GeometryError(f"unknown sampling mode: {mode}")


def sample(params: UNetParams, cond: ConditionSet, sched: NoiseSchedule,
           mode: str = "fast", steps: int = 10,
           rng: np.random.Generator | None = None,
           mask: np.ndarray | None = None) -> NocsMap:
    """Sample one canonical coordinate map under the given conditions.

    The output foreground mask is copied from the supplied condition mask
    (all-foreground when none is given); values are mapped back from the
    diffusion range to [0, 1] and clamped.
    """
    cfg = params.config
    if rng is None:
        rng = np.random.default_rng(0)
    batch = build_cond_batch([cond], cfg, params.dtype)

    def eps_fn(x, k):
        out = unet_forward(params, x[None].astype(params.dtype), batch,
                           np.array([k]))
        return out[0].astype(np.float64)

    x0 = run_sampler(eps_fn, (cfg.size, cfg.size, 3), sched, mode, steps, rng)
    values = diffusion_to_nocs(x0)
    if mask is None:
        mask = np.ones((cfg.size, cfg.size), dtype=bool)
    return NocsMap(values, mask)
