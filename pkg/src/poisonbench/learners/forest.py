"""CART trees on weighted Gini impurity and bagged random forests."""

from __future__ import annotations

import math

import numpy as np

from poisonbench.errors import ValidationError
from poisonbench.learners.config import TrainingConfig
from poisonbench.learners.models import ForestModel, Tree

_TIE_TOL = 1e-12


def gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(x: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int = 1):
    """Best threshold on one feature by weighted Gini impurity.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values. Returns ``(impurity, threshold)`` or ``None`` when no split leaves
    at least ``min_leaf`` samples on both sides. Among equal impurities the
    lowest threshold wins.
    """
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y[order]] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]  # left counts after cutting before position i+1
    total = onehot.sum(axis=0)
    right = total - left
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    # weighted impurity * n = n - (sum cL^2 / nL + sum cR^2 / nR)
    score = (left**2).sum(axis=1) / n_left + (right**2).sum(axis=1) / n_right
    score = np.where(valid, score, -np.inf)
    top = score.max()
    i = int(np.flatnonzero(score >= top - _TIE_TOL * max(1.0, abs(top)))[0])
    impurity = (n - top) / n
    return impurity, (xs[i] + xs[i + 1]) / 2.0


def n_candidate_features(spec, n_features: int) -> int:
    if spec is None:
        return n_features
    if spec == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if isinstance(spec, float):
        if not 0.0 < spec <= 1.0:
            raise ValidationError("fractional feature_subsample must lie in (0, 1]")
        return max(1, int(spec * n_features))
    if isinstance(spec, int) and spec >= 1:
        return min(spec, n_features)
    raise ValidationError(f"bad feature_subsample {spec!r}")


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    max_depth: int | None = None,
    min_leaf: int = 1,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
    sample: np.ndarray | None = None,
) -> Tree:
    """Grow a tree greedily on weighted Gini impurity.

    ``sample`` lists training row positions, possibly repeated (bootstrap
    multiplicities act as weights). With ``max_features`` below the feature
    count, each node draws that many candidate features from ``rng``.
    Equal-impurity splits resolve to the lowest feature index, then lowest
    threshold.
    """
    n_features = X.shape[1]
    if sample is None:
        sample = np.arange(len(y))
    m = n_features if max_features is None else max_features
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1, counts

    root, root_counts = new_node(sample)
    stack = [(root, sample, 0, root_counts)]
    while stack:
        node, idx, depth, counts = stack.pop()
        if (max_depth is not None and depth >= max_depth) or np.count_nonzero(counts) <= 1:
            continue
        if len(idx) < 2 * min_leaf:
            continue
        if m < n_features:
            candidates = np.sort(rng.choice(n_features, size=m, replace=False))
        else:
            candidates = range(n_features)
        best = None
        for f in candidates:
            found = best_split(X[idx, f], y[idx], n_classes, min_leaf)
            if found is None:
                continue
            imp, thr = found
            if best is None or imp < best[0] - _TIE_TOL:
                best = (imp, int(f), thr)
        if best is None:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        ln, lc = new_node(li)
        rn, rc = new_node(ri)
        feature[node], threshold[node], left[node], right[node] = f, thr, ln, rn
        # push right first so the left subtree is expanded first (stable node numbering)
        stack.append((rn, ri, depth + 1, rc))
        stack.append((ln, li, depth + 1, lc))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64).reshape(-1, n_classes),
    )


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, tree_index])


def _grow(X, y, k, config: TrainingConfig, t: int) -> Tree:
    rng = tree_rng(config.seed, t)
    n = len(y)
    sample = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
    m = n_candidate_features(config.feature_subsample, X.shape[1])
    return build_tree(X, y, k, config.max_depth, config.min_leaf, m, rng, sample)


def train_random_forest(m, labels=None, config: TrainingConfig | None = None, n_classes: int | None = None, jobs: int = 1) -> ForestModel:
    """Fit ``config.n_trees`` trees; tree ``t`` draws from a stream seeded by ``(seed, t)``.

    ``m`` may be an :class:`EncodedMatrix`, a :class:`Dataset`, or a plain
    array (then ``labels`` is required).
    """
    config = config or TrainingConfig(kind="random_forest")
    if labels is None:
        labels = m.labels
    X = getattr(m, "matrix", getattr(m, "features", m))
    X = np.asarray(X, dtype=np.float64)
    X = X.reshape(len(X), -1)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise ValidationError("cannot grow a forest on zero examples")
    if n_classes is None:
        n_classes = len(getattr(m, "class_names", ())) or int(y.max()) + 1
    if jobs > 1:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=jobs)(delayed(_grow)(X, y, n_classes, config, t) for t in range(config.n_trees))
    else:
        trees = [_grow(X, y, n_classes, config, t) for t in range(config.n_trees)]
    return ForestModel(trees, n_classes, X.shape[1])
