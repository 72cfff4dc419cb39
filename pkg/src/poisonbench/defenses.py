"""Defenses against poisoned training data, and detection scoring.

All defenses are deterministic. Neighbour and centroid computations treat
each example's features as one flat vector.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from poisonbench.data_ingest.types import Dataset
from poisonbench.errors import PoisonBenchWarning, ValidationError
from poisonbench.learners import example_losses, fit
from poisonbench.learners.config import TrainingConfig
from poisonbench.learners.models import EnsembleModel

REMOVED = "removed"
RELABELED = "relabeled"


@dataclass(frozen=True)
class Flag:
    index: int
    action: str
    new_label: int | None
    score: float


@dataclass(frozen=True)
class DetectionReport:
    flagged: tuple[Flag, ...] = ()

    @property
    def indices(self) -> set[int]:
        return {f.index for f in self.flagged}

    def __len__(self) -> int:
        return len(self.flagged)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "action", "new_label", "score"])
        for f in self.flagged:
            w.writerow([f.index, f.action, "" if f.new_label is None else f.new_label, repr(float(f.score))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"flagged": [[f.index, f.action, f.new_label, f.score] for f in self.flagged]}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionReport":
        return cls(tuple(Flag(int(i), a, None if n is None else int(n), float(s)) for i, a, n, s in d["flagged"]))


def pairwise_sq_distances(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", X, X)
    d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d, 0.0, out=d)
    return d


def nearest_neighbors(X: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    """Row ``i`` lists the ``k`` nearest other rows, closest first; equal distances go to the lower row.

    Works in row blocks so memory stays at ``chunk * n`` distances.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    sq = np.einsum("ij,ij->i", X, X)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = sq[start:stop, None] + sq[None, :] - 2.0 * (X[start:stop] @ X.T)
        np.maximum(d, 0.0, out=d)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            # candidates come out in row order, so a stable sort keeps the lower-row tie rule
            cand = np.flatnonzero(d[r] <= kth[r])
            out[start + r] = cand[np.argsort(d[r, cand], kind="stable")[:k]]
    return out


def knn_sanitize(ds: Dataset, k: int, mode: str = RELABELED):
    """Relabel (or remove) examples whose k-neighbourhood strictly outvotes their label.

    Neighbourhoods are computed once on the input dataset, so corrections do
    not cascade. The flag score is the fraction of neighbours carrying the
    majority label.
    """
    mode = {"relabel": RELABELED, "remove": REMOVED}.get(mode, mode)
    if mode not in (RELABELED, REMOVED):
        raise ValidationError(f"mode must be 'relabel' or 'remove', got {mode!r}")
    n = len(ds)
    if not 1 <= k <= n - 1:
        raise ValidationError(f"k must lie in 1..{n - 1} for {n} examples, got {k}")
    by_id = np.argsort(ds.indices, kind="stable")
    nn = nearest_neighbors(ds.flat_features()[by_id].astype(np.float64), k)
    neighbor_labels = np.empty((n, k), dtype=np.int64)
    neighbor_labels[by_id] = ds.labels[by_id][nn]
    flags, new_labels, keep = [], ds.labels.copy(), np.ones(n, dtype=bool)
    for i in range(n):
        counts = np.bincount(neighbor_labels[i], minlength=ds.n_classes)
        top = int(np.argmax(counts))
        if 2 * counts[top] > k and top != ds.labels[i]:
            score = counts[top] / k
            if mode == RELABELED:
                new_labels[i] = top
                flags.append(Flag(int(ds.indices[i]), RELABELED, top, float(score)))
            else:
                keep[i] = False
                flags.append(Flag(int(ds.indices[i]), REMOVED, None, float(score)))
    out = ds.with_labels(new_labels) if mode == RELABELED else ds.at(np.flatnonzero(keep))
    return out, DetectionReport(tuple(flags))


def centroid_anomaly_filter(ds: Dataset, z_threshold: float):
    """Drop examples unusually far from their class centroid.

    Within each class the Euclidean distances to the centroid are z-scored
    with the class mean and population std of those distances; members above
    ``z_threshold`` are removed. A class whose distances have zero spread
    loses nothing.
    """
    if not z_threshold > 0:
        raise ValidationError("z_threshold must be positive")
    X = ds.flat_features().astype(np.float64)
    counts = ds.class_counts()
    small = [c for c in range(ds.n_classes) if 0 < counts[c] < 2]
    if small:
        raise ValidationError(f"classes {small} have fewer than 2 members")
    keep = np.ones(len(ds), dtype=bool)
    flags = []
    for c in range(ds.n_classes):
        pos = np.flatnonzero(ds.labels == c)
        if len(pos) == 0:
            continue
        dist = np.linalg.norm(X[pos] - X[pos].mean(axis=0), axis=1)
        sd = dist.std()
        # identical members leave only rounding-level spread
        if sd <= 1e-12 * np.abs(X[pos]).max():
            continue
        z = (dist - dist.mean()) / sd
        for p, zi in zip(pos, z):
            if zi > z_threshold:
                keep[p] = False
                flags.append(Flag(int(ds.indices[p]), REMOVED, None, float(zi)))
    flags.sort(key=lambda f: f.index)
    return ds.at(np.flatnonzero(keep)), DetectionReport(tuple(flags))


def trimmed_robust_train(
    ds: Dataset,
    config: TrainingConfig,
    trim_fraction: float,
    rounds: int = 1,
    n_classes: int | None = None,
    return_trace: bool = False,
):
    """Alternate training and dropping the highest-loss examples.

    Each round trains on the survivors, scores them by cross-entropy, and
    drops the ``floor(trim_fraction * survivors)`` worst (ties to the lower
    example id). A final model is trained on what remains. Returns
    ``(model, report)``, or ``(model, report, trace)`` with ``return_trace``.
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise ValidationError("trim_fraction must lie in [0, 0.5)")
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    k = n_classes or ds.n_classes
    survivors = ds
    flags = []
    if trim_fraction > 0:
        for r in range(rounds):
            n_drop = int(np.floor(trim_fraction * len(survivors) + 1e-9))
            if n_drop == 0:
                break
            if len(survivors) - n_drop < k:
                warnings.warn(
                    f"round {r + 1}: trimming would leave fewer than {k} examples; stopping early",
                    PoisonBenchWarning,
                    stacklevel=2,
                )
                break
            model, _ = fit(survivors, config, k)
            losses = example_losses(model, survivors)
            order = np.lexsort((survivors.indices, -losses))
            drop = order[:n_drop]
            flags += [Flag(int(survivors.indices[p]), REMOVED, None, float(losses[p])) for p in drop]
            keep = np.ones(len(survivors), dtype=bool)
            keep[drop] = False
            survivors = survivors.at(np.flatnonzero(keep))
    model, trace = fit(survivors, config, k)
    report = DetectionReport(tuple(sorted(flags, key=lambda f: f.index)))
    return (model, report, trace) if return_trace else (model, report)


def member_seed(seed: int, member_index: int) -> int:
    """Member 0 reuses ``seed``; later members get independent derived seeds."""
    if member_index == 0:
        return seed
    return int(np.random.SeedSequence([seed, member_index]).generate_state(1)[0])


def ensemble_train_vote(ds: Dataset, config: TrainingConfig, n_members: int, bootstrap: bool = True, n_classes: int | None = None) -> EnsembleModel:
    """Bag ``n_members`` base learners; the ensemble votes by majority."""
    if n_members < 1:
        raise ValidationError("n_members must be >= 1")
    k = n_classes or ds.n_classes
    members = []
    for m in range(n_members):
        s = member_seed(config.seed, m)
        part = ds
        if bootstrap:
            rng = np.random.default_rng([s, 2])
            pick = np.sort(rng.integers(0, len(ds), size=len(ds)))
            # duplicate rows would share an id, so the resample gets fresh ids
            part = ds.replace(features=ds.features[pick], labels=ds.labels[pick], indices=np.arange(len(pick)))
        model, _ = fit(part, config.with_seed(s), k)
        members.append(model)
    return EnsembleModel(members, k, members[0].input_dim)


@dataclass(frozen=True)
class DetectionScore:
    precision: float
    recall: float
    f1: float
    true_positives: int
    flagged: int
    poisoned: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_detection(det: DetectionReport, truth, n_examples: int | None = None, valid_ids=None) -> DetectionScore:
    """Precision, recall and F1 of flagged ids against the poisoned ids.

    Empty flagged set gives precision 1; empty poisoned set gives recall 1.
    ``truth`` may be a PoisonReport, a list of them, or a set of ids. Ids are
    range-checked against ``valid_ids`` or ``0..n_examples-1`` when supplied.
    """
    flagged = det.indices
    if isinstance(truth, (set, frozenset)):
        poisoned = set(truth)
    elif isinstance(truth, (list, tuple)):
        poisoned = set().union(*(t.indices for t in truth)) if truth else set()
    else:
        poisoned = truth.indices
    if valid_ids is None and n_examples is not None:
        valid_ids = range(n_examples)
    if valid_ids is not None:
        valid = set(valid_ids)
        bad = sorted((flagged | poisoned) - valid)
        if bad:
            raise ValidationError(f"ids outside the dataset: {bad[:5]}")
    tp = len(flagged & poisoned)
    precision = tp / len(flagged) if flagged else 1.0
    recall = tp / len(poisoned) if poisoned else 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return DetectionScore(precision, recall, f1, tp, len(flagged), len(poisoned))
