"""Image normalisation, class subsetting and a CIFAR-format synthetic generator."""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from poisonbench.data_ingest.cifar import parse_cifar10_batch, serialize_cifar10_batch, CIFAR10_CLASSES
from poisonbench.data_ingest.types import IMAGE_SHAPE, ImageDataset
from poisonbench.errors import PoisonBenchWarning, ValidationError

UNIT_INTERVAL = "unit_interval"
STANDARDIZE = "standardize"


def channel_stats(ds: ImageDataset, fit_indices=None) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Per-channel mean and population std of ``x / 255`` over the fitting rows.

    Channels with zero spread get std 1 and a warning.
    """
    sub = ds if fit_indices is None else ds.take(fit_indices)
    if len(sub) == 0:
        raise ValidationError("cannot compute channel statistics on zero images")
    x = sub.features.astype(np.float64) / 255.0
    pixels = x.reshape(-1, 3)
    mu = pixels.mean(axis=0)
    sigma = np.sqrt(((pixels - mu) ** 2).mean(axis=0))
    notes = []
    # identical values can leave a rounding-level spread, which counts as zero
    degenerate = sigma < 1e-12
    for c in np.flatnonzero(degenerate):
        msg = f"channel {c} has zero variance; using sigma=1"
        warnings.warn(msg, PoisonBenchWarning, stacklevel=2)
        notes.append(msg)
    sigma = np.where(degenerate, 1.0, sigma)
    # centre a constant channel on its own value so it maps to exact zeros
    mu = np.where(degenerate, pixels[0], mu)
    return mu, sigma, notes


def normalize_images(
    ds: ImageDataset, mode: str = UNIT_INTERVAL, fit_indices=None, stats=None
) -> ImageDataset:
    """Scale raw 0..255 intensities.

    ``unit_interval`` divides by 255. ``standardize`` additionally subtracts the
    per-channel mean and divides by the per-channel std, both taken from
    ``fit_indices`` (the training split) or from precomputed ``stats``.
    """
    x = ds.features.astype(np.float64) / 255.0
    if mode == UNIT_INTERVAL:
        return ds.with_features(x)
    if mode != STANDARDIZE:
        raise ValidationError(f"unknown normalisation mode {mode!r}")
    if stats is None:
        mu, sigma, _ = channel_stats(ds, fit_indices)
    else:
        mu, sigma = stats
    return ds.with_features((x - mu) / sigma)


def select_classes(ds: ImageDataset, names: Sequence[str], per_class: int | None = None) -> ImageDataset:
    """Keep only the named classes, relabelled ``0..len(names)-1`` in the given order.

    With ``per_class`` set, the first ``per_class`` examples of each class
    (in file order) are kept.
    """
    lookup = {name: i for i, name in enumerate(ds.class_names)}
    missing = [n for n in names if n not in lookup]
    if missing:
        raise ValidationError(f"unknown classes {missing}; available: {list(ds.class_names)}")
    keep = []
    new_labels = []
    for new, name in enumerate(names):
        pos = np.flatnonzero(ds.labels == lookup[name])
        if per_class is not None:
            if len(pos) < per_class:
                raise ValidationError(f"class {name!r} has {len(pos)} examples, need {per_class}")
            pos = pos[:per_class]
        keep.append(pos)
        new_labels.append(np.full(len(pos), new))
    keep = np.concatenate(keep)
    labels = np.concatenate(new_labels)
    order = np.argsort(keep, kind="stable")
    return ImageDataset(
        features=ds.features[keep[order]],
        labels=labels[order],
        indices=ds.indices[keep[order]],
        class_names=tuple(names),
    )


def _smooth_field(rng: np.random.Generator, n_waves: int, max_freq: float) -> np.ndarray:
    """Random horizontally symmetric low-frequency pattern, shape 32x32x3, roughly in [-1, 1]."""
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    xs = np.abs(xx - 15.5)  # mirror symmetry keeps horizontal flips label-preserving
    out = np.zeros(IMAGE_SHAPE)
    for ch in range(3):
        for _ in range(n_waves):
            fy, fx = rng.uniform(0.0, max_freq, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            out[..., ch] += np.cos(2 * np.pi * (fy * yy + fx * xs) / 32.0 + phase)
    return out / np.sqrt(n_waves)


def synthetic_cifar_bytes(
    n_per_class: int,
    seed: int,
    classes: Sequence[str] = ("cat", "dog"),
    modes_per_class: int = 4,
    min_mix: float = 0.5,
    texture_noise: float = 0.5,
    pixel_noise: float = 0.0,
) -> bytes:
    """Generate a CIFAR-10 format batch of procedurally drawn images.

    Stands in for the real batches when they are unavailable. Each class owns
    ``modes_per_class`` smooth prototype patterns. An image blends one of its
    own prototypes (weight drawn from ``[min_mix, 1]``) with a prototype of a
    different class, then adds a per-image smooth texture and pixel noise.
    Low ``min_mix`` makes classes overlap more. Labels use the canonical
    CIFAR-10 ids of ``classes``.
    """
    if n_per_class < 0:
        raise ValidationError("n_per_class must be non-negative")
    ids = [CIFAR10_CLASSES.index(c) for c in classes]
    rng = np.random.default_rng(seed)
    protos = np.stack(
        [
            np.stack([_smooth_field(rng, 6, 3.0) for _ in range(modes_per_class)])
            for _ in classes
        ]
    )
    k = len(classes)
    labels = np.repeat(np.arange(k), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    images = np.empty((len(labels),) + IMAGE_SHAPE)
    for i, c in enumerate(labels):
        own = protos[c, rng.integers(modes_per_class)]
        other_c = (c + 1 + rng.integers(k - 1)) % k if k > 1 else c
        other = protos[other_c, rng.integers(modes_per_class)]
        a = rng.uniform(min_mix, 1.0)
        x = a * own + (1 - a) * other
        x = x + texture_noise * _smooth_field(rng, 4, 4.0)
        x = 0.5 + 0.18 * x + rng.normal(0, pixel_noise, IMAGE_SHAPE)
        x = x + rng.uniform(-0.05, 0.05)
        images[i] = x
    raw = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    ds = ImageDataset(
        features=raw,
        labels=np.asarray(ids)[labels],
        indices=np.arange(len(labels)),
        class_names=CIFAR10_CLASSES,
    )
    return serialize_cifar10_batch(ds)


def synthetic_cifar_subset(n_per_class: int, seed: int, classes: Sequence[str] = ("cat", "dog"), **params) -> ImageDataset:
    """Generate, round-trip through the binary format, and subset to ``classes``."""
    data = synthetic_cifar_bytes(n_per_class, seed, classes, **params)
    return select_classes(parse_cifar10_batch(data), classes)
