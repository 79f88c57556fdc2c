"""Discrete diffusion noise schedule and the closed-form forward marginal.

Timesteps are 1-based: k runs from 1 to K. Internally the beta/alpha-bar
tables are 0-indexed with entry k-1 belonging to step k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta table with cached alpha and cumulative-product alpha-bar."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) < 2:
            raise ScheduleError("need at least 2 steps")
        if not (0.0 < b[0] < b[-1] < 1.0):
            raise ScheduleError("betas must satisfy 0 < beta_1 < beta_K < 1")
        alphas = 1.0 - b
        abar = np.cumprod(alphas)
        if np.any(np.diff(abar) >= 0):
            raise ScheduleError("alpha-bar must be strictly decreasing")
        if abar[-1] >= 1e-3:
            raise ScheduleError(
                f"terminal alpha-bar {abar[-1]:.2e} >= 1e-3; the chain does "
                "not end near pure noise")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", abar)

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def beta(self, k):
        return self.betas[np.asarray(k) - 1]

    def alpha(self, k):
        return self.alphas[np.asarray(k) - 1]

    def alpha_bar(self, k):
        """Cumulative product for step k; k = 0 returns 1 (empty product)."""
        k = np.asarray(k)
        out = np.where(k > 0, self.alpha_bars[np.maximum(k, 1) - 1], 1.0)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"num_steps": self.num_steps,
                "beta_start": float(self.betas[0]),
                "beta_end": float(self.betas[-1])}


def make_schedule(num_steps: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end over num_steps."""
    if num_steps < 2:
        raise ScheduleError("num_steps must be >= 2")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ScheduleError("need 0 < beta_start < beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, num_steps))


def forward_diffuse(x0: np.ndarray, k, eps: np.ndarray,
                    sched: NoiseSchedule) -> np.ndarray:
    """Closed-form marginal sample sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.

    x0 is the clean signal already mapped to the diffusion value range
    (see nocs_to_diffusion); k may be a scalar or a per-sample array
    broadcast over trailing axes.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1) or np.any(k_arr > sched.num_steps):
        raise ScheduleError("k out of range")
    abar = sched.alpha_bars[k_arr - 1]
    extra = x0.ndim - abar.ndim
    abar = abar.reshape(abar.shape + (1,) * extra)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def nocs_to_diffusion(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] canonical coordinates to the [-1, 1] diffusion range."""
    return values * 2.0 - 1.0


def diffusion_to_nocs(x: np.ndarray) -> np.ndarray:
    """Map diffusion-range values back to clamped [0, 1] coordinates."""
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)
