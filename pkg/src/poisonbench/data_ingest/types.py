"""Dataset containers.

Datasets are immutable: arrays are stored read-only and every transformation
returns a new object. ``indices`` are stable example ids that survive
subsetting, poisoning and sanitisation, so ground-truth manifests can always be
matched back to rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from poisonbench.errors import ValidationError

IMAGE_SHAPE = (32, 32, 3)
NUMERIC = "numeric"
CATEGORICAL = "categorical"


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class LabeledExample(NamedTuple):
    index: int
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Numeric features with integer class labels.

    ``features`` has shape ``(N, ...)``; the trailing shape is whatever the
    producer used (flat vectors for encoded tabular data, ``32x32x3`` for
    images).
    """

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        features = _frozen(self.features, np.float64 if self.features.dtype.kind == "f" else None)
        labels = _frozen(self.labels, np.int64).reshape(-1)
        indices = _frozen(self.indices, np.int64).reshape(-1)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))
        n = len(labels)
        if features.shape[0] != n or len(indices) != n:
            raise ValidationError(
                f"features ({features.shape[0]}), labels ({n}) and indices "
                f"({len(indices)}) disagree on the example count"
            )
        k = len(self.class_names)
        if n and (labels.min() < 0 or labels.max() >= k):
            raise ValidationError(f"labels must lie in 0..{k - 1}")
        if len(np.unique(indices)) != n:
            raise ValidationError("example indices must be unique")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.labels)

    def examples(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield LabeledExample(int(self.indices[i]), self.features[i], int(self.labels[i]))

    def flat_features(self) -> np.ndarray:
        return self.features.reshape(len(self), -1)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def positions_of(self, ids: Sequence[int]) -> np.ndarray:
        """Map example ids to row positions."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        order = np.argsort(self.indices, kind="stable")
        sorted_ids = self.indices[order]
        loc = np.searchsorted(sorted_ids, ids)
        loc = np.clip(loc, 0, max(len(sorted_ids) - 1, 0))
        if len(ids) and (len(sorted_ids) == 0 or np.any(sorted_ids[loc] != ids)):
            missing = ids[(len(sorted_ids) == 0) | (sorted_ids[loc] != ids)]
            raise ValidationError(f"unknown example ids: {missing[:5].tolist()}")
        return order[loc]

    def take(self, ids: Sequence[int]) -> "Dataset":
        """Subset by example id, in the order given."""
        return self.at(self.positions_of(ids))

    def at(self, positions) -> "Dataset":
        """Subset by row position."""
        positions = np.asarray(positions, dtype=np.int64)
        return self.replace(
            features=self.features[positions],
            labels=self.labels[positions],
            indices=self.indices[positions],
        )

    def replace(self, **changes) -> "Dataset":
        fields = dict(
            features=self.features,
            labels=self.labels,
            indices=self.indices,
            class_names=self.class_names,
        )
        fields.update(changes)
        return type(self)(**fields)

    def with_labels(self, labels) -> "Dataset":
        return self.replace(labels=labels)

    def with_features(self, features) -> "Dataset":
        return self.replace(features=features)


@dataclass(frozen=True, eq=False)
class ImageDataset(Dataset):
    """Images stored as ``(N, 32, 32, 3)``.

    Freshly parsed batches hold raw ``uint8`` intensities; after
    :func:`normalize_images` they hold float64 values.
    """

    def __post_init__(self):
        super().__post_init__()
        if self.features.shape[1:] != IMAGE_SHAPE:
            raise ValidationError(
                f"image features must have shape (N, 32, 32, 3), got {self.features.shape}"
            )

    @classmethod
    def empty(cls, class_names: Sequence[str]) -> "ImageDataset":
        return cls(
            features=np.zeros((0,) + IMAGE_SHAPE, dtype=np.uint8),
            labels=np.zeros(0, dtype=np.int64),
            indices=np.zeros(0, dtype=np.int64),
            class_names=tuple(class_names),
        )

    def to_flat(self) -> Dataset:
        return Dataset(self.flat_features(), self.labels, self.indices, self.class_names)


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Raw claims-style table: typed columns plus a binary label.

    Columns are stored column-wise; ``rows`` materialises them row-wise.
    """

    schema: tuple[tuple[str, str], ...]
    columns: dict
    labels: np.ndarray
    indices: np.ndarray = None
    class_names: tuple[str, ...] = ("non_fraud", "fraud")

    def __post_init__(self):
        schema = tuple((str(name), str(kind)) for name, kind in self.schema)
        for name, kind in schema:
            if kind not in (NUMERIC, CATEGORICAL):
                raise ValidationError(f"column {name!r}: unknown kind {kind!r}")
        labels = _frozen(self.labels, np.int64).reshape(-1)
        n = len(labels)
        indices = np.arange(n) if self.indices is None else self.indices
        indices = _frozen(indices, np.int64).reshape(-1)
        cols = {}
        for name, kind in schema:
            if name not in self.columns:
                raise ValidationError(f"missing column {name!r}")
            col = self.columns[name]
            cols[name] = _frozen(col, np.float64) if kind == NUMERIC else _frozen(col, object)
            if len(cols[name]) != n:
                raise ValidationError(f"column {name!r} has {len(cols[name])} rows, expected {n}")
        if n and not np.all((labels == 0) | (labels == 1)):
            raise ValidationError("tabular labels must be 0 (non-fraud) or 1 (fraud)")
        if len(indices) != n or len(np.unique(indices)) != n:
            raise ValidationError("indices must be unique and match the row count")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def column_names(self) -> list[str]:
        return [name for name, _ in self.schema]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def rows(self) -> list[tuple]:
        cols = [self.columns[name] for name in self.column_names]
        return [tuple(c[i] for c in cols) for i in range(len(self))]

    def at(self, positions) -> "TabularDataset":
        positions = np.asarray(positions, dtype=np.int64)
        return TabularDataset(
            schema=self.schema,
            columns={k: v[positions] for k, v in self.columns.items()},
            labels=self.labels[positions],
            indices=self.indices[positions],
            class_names=self.class_names,
        )

    def with_labels(self, labels) -> "TabularDataset":
        return TabularDataset(self.schema, self.columns, labels, self.indices, self.class_names)


@dataclass(frozen=True, eq=False)
class EncodedMatrix:
    """Numeric design matrix produced by :func:`encode_tabular`.

    ``column_map[j]`` describes where column ``j`` came from:
    ``{"source": name, "kind": "numeric"}`` or
    ``{"source": name, "kind": "onehot", "level": value}``.
    ``scaling_params`` maps numeric source columns to ``(mean, std)`` where
    ``std`` is the divisor actually used (1.0 for constant columns).
    """

    matrix: np.ndarray
    column_map: tuple
    scaling_params: dict
    labels: np.ndarray
    indices: np.ndarray
    class_names: tuple[str, ...] = ("non_fraud", "fraud")
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "indices", _frozen(self.indices, np.int64))

    def to_dataset(self) -> Dataset:
        return Dataset(self.matrix, self.labels, self.indices, self.class_names)


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/test partition expressed as example ids."""

    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int
    warnings: tuple[str, ...] = ()
