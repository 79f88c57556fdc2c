"""Category-level object pose estimation from dense canonical coordinate
maps predicted by a conditional diffusion model, with robust similarity
registration and multi-hypothesis confidence selection."""

__version__ = "0.1.0"
