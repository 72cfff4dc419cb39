"""Image augmentation: random horizontal flip and padded random crop."""

from __future__ import annotations

import numpy as np

PAD = 4


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1, :]


def crop_from_padded(image: np.ndarray, dy: int, dx: int, pad: int = PAD) -> np.ndarray:
    """Crop an HxW window at offset ``(dy, dx)`` from the image zero-padded by ``pad``."""
    h, w = image.shape[:2]
    canvas = np.zeros((h + 2 * pad, w + 2 * pad) + image.shape[2:], dtype=image.dtype)
    canvas[pad : pad + h, pad : pad + w] = image
    return canvas[dy : dy + h, dx : dx + w]


def _augment(image: np.ndarray, rng: np.random.Generator, force_flip: bool | None = None) -> np.ndarray:
    flip = rng.random() < 0.5
    dy, dx = rng.integers(0, 2 * PAD + 1, size=2)
    if force_flip is not None:
        flip = force_flip
    out = hflip(image) if flip else image
    return crop_from_padded(out, int(dy), int(dx))


def augment_image(image: np.ndarray, seed: int, enabled: bool = True) -> np.ndarray:
    """Flip with probability 0.5, then crop a random 32x32 window from a 4-pixel zero pad."""
    if not enabled:
        return image
    return _augment(np.asarray(image), np.random.default_rng(seed))


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([_augment(img, rng) for img in images])
