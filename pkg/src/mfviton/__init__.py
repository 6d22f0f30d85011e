"""Mask-free virtual try-on at desk scale.

A procedural person/garment world, an exact latent codec, a rectified-flow
denoiser with reference and semantic garment branches, the two-stage
mask-based to mask-free training pipeline, and stand-in evaluation metrics.
"""
from .errors import ArtifactIOError, ConfigError, DivergenceError, MFVitonError

__version__ = "0.1.0"

__all__ = ["ArtifactIOError", "ConfigError", "DivergenceError", "MFVitonError", "__version__"]
