"""Poisoning transformations with ground-truth manifests.

Every attack is a pure function ``(dataset, params, seed) -> (dataset, report)``.
Counts derived from a rate are floored, so ``rate * N`` never overshoots.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from poisonbench.data_ingest.types import Dataset
from poisonbench.errors import PoisonBenchWarning, ValidationError

LABEL_FLIP = "label_flip"
IMAGE_SWAP = "image_swap"
NOISE = "noise"


def _floor_count(rate: float, n: int) -> int:
    # tolerate representation error such as 0.29 * 100 = 28.999999999999996
    return int(math.floor(rate * n + 1e-9))


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate <= 1.0:
        raise ValidationError(f"rate must lie in [0, 1], got {rate}")


@dataclass(frozen=True)
class PoisonEntry:
    index: int
    kind: str
    original_label: int
    new_label: int


@dataclass(frozen=True)
class PoisonReport:
    """Manifest of altered examples.

    For ``label_flip`` entries ``new_label`` is the label written into the
    dataset. For ``image_swap`` entries labels do not change; ``new_label`` is
    the class the swapped-in imagery came from. Noise entries keep
    ``new_label == original_label``.
    """

    entries: tuple[PoisonEntry, ...]
    achieved_rate: float

    @property
    def indices(self) -> set[int]:
        return {e.index for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "kind", "original_label", "new_label"])
        for e in self.entries:
            w.writerow([e.index, e.kind, e.original_label, e.new_label])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "achieved_rate": self.achieved_rate,
            "entries": [[e.index, e.kind, e.original_label, e.new_label] for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoisonReport":
        return cls(
            entries=tuple(PoisonEntry(int(i), str(k), int(o), int(n)) for i, k, o, n in d["entries"]),
            achieved_rate=float(d["achieved_rate"]),
        )

    @classmethod
    def merge(cls, reports, n_total: int) -> "PoisonReport":
        """Concatenate manifests from sequential attacks; the rate counts distinct ids."""
        entries = tuple(e for r in reports for e in r.entries)
        touched = {e.index for e in entries}
        return cls(entries, len(touched) / n_total if n_total else 0.0)


def _report(entries: list[PoisonEntry], n: int) -> PoisonReport:
    entries = sorted(entries, key=lambda e: e.index)
    return PoisonReport(tuple(entries), len(entries) / n if n else 0.0)


def flip_labels_random(ds: Dataset, rate: float, seed: int):
    """Relabel ``floor(rate * N)`` uniformly chosen examples to a different class.

    The replacement label is uniform over the other ``K - 1`` classes.
    """
    _check_rate(rate)
    n, k = len(ds), ds.n_classes
    count = _floor_count(rate, n)
    if count and k < 2:
        raise ValidationError("cannot flip labels with fewer than 2 classes")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=count, replace=False)) if count else np.zeros(0, int)
    labels = ds.labels.copy()
    old = labels[chosen]
    new = (old + rng.integers(1, k, size=count)) % k if count else old
    labels[chosen] = new
    entries = [
        PoisonEntry(int(ds.indices[p]), LABEL_FLIP, int(o), int(w)) for p, o, w in zip(chosen, old, new)
    ]
    return ds.with_labels(labels), _report(entries, n)


def flip_labels_targeted(ds: Dataset, from_class: int, to_class: int, rate: float, seed: int):
    """Relabel ``floor(rate * |from_class|)`` members of ``from_class`` as ``to_class``."""
    _check_rate(rate)
    if from_class == to_class:
        raise ValidationError("from_class and to_class must differ")
    for c in (from_class, to_class):
        if not 0 <= c < ds.n_classes:
            raise ValidationError(f"class {c} outside 0..{ds.n_classes - 1}")
    members = np.flatnonzero(ds.labels == from_class)
    if len(members) == 0:
        if rate > 0:
            warnings.warn(f"class {from_class} is empty; nothing to flip", PoisonBenchWarning, stacklevel=2)
        return ds, _report([], len(ds))
    count = _floor_count(rate, len(members))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(members, size=count, replace=False))
    labels = ds.labels.copy()
    labels[chosen] = to_class
    entries = [PoisonEntry(int(ds.indices[p]), LABEL_FLIP, int(from_class), int(to_class)) for p in chosen]
    return ds.with_labels(labels), _report(entries, len(ds))


def replace_instances(ds: Dataset, class_a: int, class_b: int, count: int, seed: int):
    """Exchange feature payloads between ``count`` random pairs drawn from two classes.

    Labels stay where they were, so afterwards ``count`` examples labelled
    ``class_a`` carry ``class_b`` imagery and vice versa.
    """
    if class_a == class_b:
        raise ValidationError("class_a and class_b must differ")
    if count < 0:
        raise ValidationError("count must be non-negative")
    pos_a = np.flatnonzero(ds.labels == class_a)
    pos_b = np.flatnonzero(ds.labels == class_b)
    for c, pos in ((class_a, pos_a), (class_b, pos_b)):
        if count > len(pos):
            name = ds.class_names[c] if 0 <= c < ds.n_classes else "?"
            raise ValidationError(f"class {c} ({name}) has only {len(pos)} examples, cannot swap {count}")
    if count == 0:
        return ds, _report([], len(ds))
    rng = np.random.default_rng(seed)
    pick_a = rng.choice(pos_a, size=count, replace=False)
    pick_b = rng.choice(pos_b, size=count, replace=False)
    features = ds.features.copy()
    features[pick_a] = ds.features[pick_b]
    features[pick_b] = ds.features[pick_a]
    entries = [PoisonEntry(int(ds.indices[p]), IMAGE_SWAP, int(class_a), int(class_b)) for p in pick_a]
    entries += [PoisonEntry(int(ds.indices[p]), IMAGE_SWAP, int(class_b), int(class_a)) for p in pick_b]
    return ds.with_features(features), _report(entries, len(ds))


def inject_noise(ds: Dataset, rate: float, magnitude: float, seed: int):
    """Add per-pixel uniform noise in ``[-magnitude, magnitude]`` to ``floor(rate * N)`` images, clamped to [0, 1]."""
    _check_rate(rate)
    if magnitude < 0:
        raise ValidationError("magnitude must be non-negative")
    n = len(ds)
    count = _floor_count(rate, n)
    if count == 0:
        return ds, _report([], n)
    if ds.features.dtype.kind != "f" or ds.features.min() < 0 or ds.features.max() > 1:
        raise ValidationError("inject_noise expects float features already scaled to [0, 1]")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=count, replace=False))
    features = ds.features.copy()
    noise = rng.uniform(-magnitude, magnitude, size=(count,) + ds.features.shape[1:])
    features[chosen] = np.clip(features[chosen] + noise, 0.0, 1.0)
    entries = [PoisonEntry(int(ds.indices[p]), NOISE, int(ds.labels[p]), int(ds.labels[p])) for p in chosen]
    return ds.with_features(features), _report(entries, n)


@dataclass(frozen=True)
class PoisonSpec:
    """Declarative attack: ``variant`` plus its parameters and a seed.

    Variants and their parameters:

    * ``label_flip_random``: ``rate``
    * ``label_flip_targeted``: ``from_class``, ``to_class``, ``rate``
    * ``instance_replace``: ``class_a``, ``class_b``, ``count``
    * ``noise_injection``: ``rate``, ``magnitude``
    """

    variant: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    VARIANTS = {
        "label_flip_random": ("rate",),
        "label_flip_targeted": ("from_class", "to_class", "rate"),
        "instance_replace": ("class_a", "class_b", "count"),
        "noise_injection": ("rate", "magnitude"),
    }

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ValidationError(f"unknown poison variant {self.variant!r}")
        needed = set(self.VARIANTS[self.variant])
        given = set(self.params)
        if needed != given:
            raise ValidationError(
                f"{self.variant} needs parameters {sorted(needed)}, got {sorted(given)}"
            )
        p = self.params
        if "rate" in p:
            _check_rate(p["rate"])
        if p.get("count", 0) < 0 or p.get("magnitude", 0) < 0:
            raise ValidationError("count and magnitude must be non-negative")
        if "from_class" in p and p["from_class"] == p["to_class"]:
            raise ValidationError("from_class and to_class must differ")
        if "class_a" in p and p["class_a"] == p["class_b"]:
            raise ValidationError("class_a and class_b must differ")

    def with_seed(self, seed: int) -> "PoisonSpec":
        return PoisonSpec(self.variant, dict(self.params), seed)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "PoisonSpec":
        return cls(d["variant"], dict(d.get("params", {})), int(d.get("seed", 0)))


def apply_poison(ds: Dataset, spec: PoisonSpec):
    p = spec.params
    if spec.variant == "label_flip_random":
        return flip_labels_random(ds, p["rate"], spec.seed)
    if spec.variant == "label_flip_targeted":
        return flip_labels_targeted(ds, p["from_class"], p["to_class"], p["rate"], spec.seed)
    if spec.variant == "instance_replace":
        return replace_instances(ds, p["class_a"], p["class_b"], p["count"], spec.seed)
    return inject_noise(ds, p["rate"], p["magnitude"], spec.seed)


def apply_poisons(ds: Dataset, specs):
    """Apply specs in order; returns the final dataset and one report per spec."""
    reports = []
    for spec in specs:
        ds, rep = apply_poison(ds, spec)
        reports.append(rep)
    return ds, reports
