"""Fixed analytic image <-> latent codec standing in for a learned VAE.

encode: 8x8 average pooling, then RGB and luminance mapped to [-1, 1]
        (c = 4 latent channels, h = H/8, w = W/8).
decode: RGB channels back to [0, 1], nearest-neighbour upsampling.
"""

from __future__ import annotations

import numpy as np

FACTOR = 8
LATENT_CHANNELS = 4
_LUMA = np.array([0.299, 0.587, 0.114])


def _pool(images: np.ndarray, factor: int, reduce) -> np.ndarray:
    *lead, h, w = images.shape
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {factor}")
    blocks = images.reshape(*lead, h // factor, factor, w // factor, factor)
    return reduce(blocks, axis=(-3, -1))


def encode(images: np.ndarray) -> np.ndarray:
    """(F, 3, H, W) images in [0, 1] -> (F, H/8, W/8, 4) latents."""
    images = np.asarray(images, dtype=np.float64)
    rgb = np.moveaxis(_pool(images, FACTOR, np.mean), -3, -1)  # (F, h, w, 3)
    luma = rgb @ _LUMA
    return 2.0 * np.concatenate([rgb, luma[..., None]], axis=-1) - 1.0


def decode(latents: np.ndarray) -> np.ndarray:
    """(F, h, w, 4) latents -> (F, 3, 8h, 8w) images in [0, 1]."""
    rgb = np.clip((np.asarray(latents)[..., :3] + 1.0) / 2.0, 0.0, 1.0)
    rgb = np.moveaxis(rgb, -1, -3)
    return rgb.repeat(FACTOR, axis=-2).repeat(FACTOR, axis=-1)


def downsample_mask(mask: np.ndarray, factor: int = FACTOR) -> np.ndarray:
    """Max-pool a binary (..., H, W) mask to latent resolution."""
    return _pool(np.asarray(mask, dtype=bool), factor, np.any)


def compose_portrait(shading: np.ndarray, mask: np.ndarray, albedo, background) -> np.ndarray:
    """Toy portrait frame: shaded albedo on the mask, flat background elsewhere.

    shading (H, W, 3), mask (H, W) -> (3, H, W).
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    img = np.where(mask[..., None], shading * albedo, background)
    return np.moveaxis(np.clip(img, 0.0, 1.0), -1, 0)
