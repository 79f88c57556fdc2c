"""Conditional denoising-diffusion estimator for canonical coordinate maps:
noise schedule, U-Net with hand-derived reverse-mode gradients, training
loop with condition dropout, and ancestral / fast deterministic samplers."""

from .schedule import NoiseSchedule, make_schedule, forward_diffuse  # noqa: F401
from .unet import UNetConfig, UNetParams, init_params, unet_forward  # noqa: F401
from .sampling import run_sampler, sample  # noqa: F401
