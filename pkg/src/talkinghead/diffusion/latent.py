"""Exactly invertible pixel <-> latent codec: space-to-depth with factor 4.

Stands in for a trained VAE.  Pixels scale to [-1, 1]; each 4x4 block of
RGB pixels becomes one 48-channel latent site, channel (dy*4+dx)*3+ch, so
every pixel round-trips within float rounding of the scaling.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

FACTOR = 4
LATENT_CHANNELS = FACTOR * FACTOR * 3


def encode_latent(image: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (H/4, W/4, 48) float32."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    if h % FACTOR or w % FACTOR:
        raise ShapeError(f"image size {h}x{w} not divisible by {FACTOR}")
    x = image.astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    # (h/4, 4, w/4, 4, 3) -> (h/4, w/4, dy, dx, 3)
    blocks = x.reshape(h // FACTOR, FACTOR, w // FACTOR, FACTOR, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(h // FACTOR, w // FACTOR, LATENT_CHANNELS))


def decode_latent(latent: np.ndarray) -> np.ndarray:
    """(h, w, 48) float32 -> (4h, 4w, 3) uint8, clipping out-of-range values."""
    latent = np.asarray(latent, dtype=np.float32)
    if latent.ndim != 3 or latent.shape[2] != LATENT_CHANNELS:
        raise ShapeError(f"latent must be (h, w, {LATENT_CHANNELS}), got {latent.shape}")
    h, w = latent.shape[:2]
    blocks = latent.reshape(h, w, FACTOR, FACTOR, 3).transpose(0, 2, 1, 3, 4)
    x = blocks.reshape(h * FACTOR, w * FACTOR, 3)
    pix = (x + np.float32(1.0)) * np.float32(127.5)
    return np.clip(np.round(pix), 0, 255).astype(np.uint8)


def to_chw(latent: np.ndarray) -> np.ndarray:
    """(h, w, C) -> (C, h, w) for the conv stack."""
    return np.ascontiguousarray(np.transpose(latent, (2, 0, 1)))


def from_chw(latent: np.ndarray) -> np.ndarray:
    """(C, h, w) -> (h, w, C)."""
    return np.ascontiguousarray(np.transpose(latent, (1, 2, 0)))
