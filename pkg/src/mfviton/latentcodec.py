"""Exact pixel <-> latent codec (space-to-depth with a fixed affine shift).

Stands in for a frozen VAE. Latents are float64 so that the shift by 0.5 is
exact for float32 pixels (zero, or at least 2**-29 in magnitude, which covers
8-bit images and uniform float32 noise), which makes ``decode(encode(x)) == x``
hold bit-for-bit.
"""
from __future__ import annotations

import numpy as np

PATCH_FACTOR = 4
OFFSET = 0.5


def latent_shape(image_shape, patch_factor: int = PATCH_FACTOR) -> tuple[int, int, int]:
    h, w = image_shape[:2]
    return h // patch_factor, w // patch_factor, 3 * patch_factor * patch_factor


def encode(image: np.ndarray, patch_factor: int = PATCH_FACTOR, normalize: bool = True) -> np.ndarray:
    """``(..., H, W, 3)`` float image -> ``(..., H/f, W/f, 3 f^2)`` float64 latent."""
    image = np.asarray(image)
    *lead, h, w, c = image.shape
    if c != 3:
        raise ValueError(f"expected 3 color channels, got {c}")
    if h % patch_factor or w % patch_factor:
        raise ValueError(f"image size {h}x{w} is not divisible by patch factor {patch_factor}")
    f = patch_factor
    x = image.astype(np.float64).reshape(*lead, h // f, f, w // f, f, 3)
    n = len(lead)
    # (..., h, py, w, px, rgb) -> (..., h, w, py, px, rgb)
    x = np.moveaxis(x, n + 1, n + 2).reshape(*lead, h // f, w // f, 3 * f * f)
    return x - OFFSET if normalize else x


def decode(latent: np.ndarray, patch_factor: int = PATCH_FACTOR, normalize: bool = True) -> np.ndarray:
    """Exact inverse of :func:`encode`; returns float32 pixels."""
    latent = np.asarray(latent, dtype=np.float64)
    *lead, h, w, c = latent.shape
    f = patch_factor
    if c != 3 * f * f:
        raise ValueError(f"latent has {c} channels, expected {3 * f * f} for patch factor {f}")
    x = latent + OFFSET if normalize else latent
    n = len(lead)
    x = x.reshape(*lead, h, w, f, f, 3)
    x = np.moveaxis(x, n + 2, n + 1).reshape(*lead, h * f, w * f, 3)
    return x.astype(np.float32)
