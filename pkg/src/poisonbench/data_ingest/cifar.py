"""CIFAR-10 binary batch files.

Each record is 3073 bytes: one label byte followed by the 1024 red, 1024 green
and 1024 blue intensities of a 32x32 image, each plane row-major.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from poisonbench.data_ingest.types import ImageDataset
from poisonbench.errors import CorruptRecordError, FormatError, ValidationError

RECORD_BYTES = 3073
PIXELS_PER_CHANNEL = 1024

CIFAR10_CLASSES = (
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
)


def parse_cifar10_batch(
    data: bytes, class_names: Sequence[str] = CIFAR10_CLASSES, first_index: int = 0
) -> ImageDataset:
    """Decode a binary batch into an :class:`ImageDataset` of raw ``uint8`` pixels.

    ``first_index`` offsets the example ids so several batches can be
    concatenated without collisions.
    """
    if len(class_names) != 10:
        raise ValidationError(f"CIFAR-10 needs 10 class names, got {len(class_names)}")
    n_bytes = len(data)
    if n_bytes % RECORD_BYTES:
        n_full = n_bytes // RECORD_BYTES
        raise FormatError(
            f"truncated CIFAR-10 stream: {n_bytes} bytes is not a multiple of "
            f"{RECORD_BYTES}; incomplete record starts at offset {n_full * RECORD_BYTES}"
        )
    n = n_bytes // RECORD_BYTES
    if n == 0:
        return ImageDataset.empty(class_names)
    records = np.frombuffer(data, dtype=np.uint8).reshape(n, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= 10)
    if len(bad):
        i = int(bad[0])
        raise CorruptRecordError(
            f"record {i} (offset {i * RECORD_BYTES}) has label byte {labels[i]} >= 10"
        )
    # channel-planar -> H x W x C
    images = records[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1)
    return ImageDataset(
        features=np.ascontiguousarray(images),
        labels=labels,
        indices=np.arange(first_index, first_index + n),
        class_names=tuple(class_names),
    )


def serialize_cifar10_batch(ds: ImageDataset) -> bytes:
    """Inverse of :func:`parse_cifar10_batch`.

    Float images are assumed to be in [0, 1] and are quantised with
    ``round(x * 255)``.
    """
    images = ds.features
    if images.dtype != np.uint8:
        images = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    n = len(ds)
    out = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = ds.labels.astype(np.uint8)
    out[:, 1:] = images.transpose(0, 3, 1, 2).reshape(n, 3 * PIXELS_PER_CHANNEL)
    return out.tobytes()


def read_cifar10_batches(
    paths: Iterable[str | os.PathLike], class_names: Sequence[str] = CIFAR10_CLASSES
) -> ImageDataset:
    """Parse and concatenate several batch files with globally unique ids."""
    parts = []
    offset = 0
    for path in paths:
        part = parse_cifar10_batch(Path(path).read_bytes(), class_names, first_index=offset)
        offset += len(part)
        parts.append(part)
    if not parts:
        return ImageDataset.empty(class_names)
    return ImageDataset(
        features=np.concatenate([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        indices=np.concatenate([p.indices for p in parts]),
        class_names=tuple(class_names),
    )


def write_cifar10_batch(ds: ImageDataset, path: str | os.PathLike) -> None:
    Path(path).write_bytes(serialize_cifar10_batch(ds))
