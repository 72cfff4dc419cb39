"""Stratified train/test partitioning."""

from __future__ import annotations

import warnings

import numpy as np

from poisonbench.data_ingest.types import DatasetSplit
from poisonbench.errors import PoisonBenchWarning, ValidationError


def allocate_stratified(class_counts, total: int) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` slots over classes.

    Each class gets floor or ceil of its proportional quota; leftover slots go
    to the largest fractional remainders, lower class index first on ties.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    n = int(counts.sum())
    if n == 0:
        return np.zeros_like(counts)
    quota = counts * total / n
    alloc = np.floor(quota).astype(np.int64)
    remainder = quota - alloc
    leftover = int(total - alloc.sum())
    order = sorted(range(len(counts)), key=lambda c: (-remainder[c], c))
    for c in order[:leftover]:
        alloc[c] += 1
    return alloc


def stratified_split(ds, test_fraction: float, seed: int) -> DatasetSplit:
    """Split ``ds`` (anything with ``labels`` and ``indices``) preserving class shares.

    The test set holds ``round(N * test_fraction)`` examples apportioned over
    classes by largest remainder; members are drawn uniformly per class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    labels = np.asarray(ds.labels)
    ids = np.asarray(ds.indices)
    k = getattr(ds, "n_classes", int(labels.max()) + 1 if len(labels) else 0)
    counts = np.bincount(labels, minlength=k)
    present = counts > 0
    if len(labels) == 0:
        raise ValidationError("cannot split an empty dataset")
    total = int(np.floor(len(labels) * test_fraction + 0.5))
    alloc = allocate_stratified(counts, total)
    rng = np.random.default_rng(seed)
    test, train, notes = [], [], []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if not present[c]:
            continue
        chosen = rng.permutation(members)
        test.append(ids[chosen[: alloc[c]]])
        train.append(ids[chosen[alloc[c]:]])
        if alloc[c] in (0, counts[c]):
            side = "train" if alloc[c] == 0 else "test"
            msg = f"class {c}: all {counts[c]} examples fall on the {side} side"
            warnings.warn(msg, PoisonBenchWarning, stacklevel=2)
            notes.append(msg)
    return DatasetSplit(
        train_indices=tuple(int(i) for i in np.sort(np.concatenate(train))),
        test_indices=tuple(int(i) for i in np.sort(np.concatenate(test))),
        seed=seed,
        warnings=tuple(notes),
    )
