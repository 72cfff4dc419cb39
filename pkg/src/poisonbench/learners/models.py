"""Trained model types, prediction, and JSON persistence."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from poisonbench.errors import FormatError, ShapeError

FORMAT_NAME = "poisonbench-model"
FORMAT_VERSION = 1


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def argmax_lowest(p: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. lowest-index tie-breaking
    return np.argmax(p, axis=1)


@dataclass(eq=False)
class NeuralModel:
    """Fully connected network; ``kind == "softmax"`` has no hidden layers.

    Hidden layers use tanh.
    """

    kind: str
    weights: list
    biases: list
    n_classes: int
    input_dim: int

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
        return h

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return argmax_lowest(self.logits(X))

    def parameters(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def to_dict(self) -> dict:
        return {
            "activation": "tanh",
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, kind, n_classes, input_dim, d) -> "NeuralModel":
        weights = [np.array(l["weights"], dtype=np.float64).reshape(l["shape"]) for l in d["layers"]]
        biases = [np.array(l["bias"], dtype=np.float64) for l in d["layers"]]
        return cls(kind, weights, biases, n_classes, input_dim)


@dataclass(eq=False)
class Tree:
    """Array-encoded binary tree. Leaves have ``feature == -1``.

    ``value[node]`` holds the class frequencies of the training samples that
    reached ``node``. Samples go left when ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d, n_classes) -> "Tree":
        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=np.float64),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            value=np.array(d["value"], dtype=np.float64).reshape(-1, n_classes),
        )


@dataclass(eq=False)
class ForestModel:
    trees: list
    n_classes: int
    input_dim: int
    kind: str = "random_forest"

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros((len(X), self.n_classes))
        for t in self.trees:
            total += t.predict_proba(X)
        return total / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return argmax_lowest(self.predict_proba(X))

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, kind, n_classes, input_dim, d) -> "ForestModel":
        return cls([Tree.from_dict(t, n_classes) for t in d["trees"]], n_classes, input_dim)


@dataclass(eq=False)
class EnsembleModel:
    """Bagged members. ``predict`` is a majority vote (lowest class wins ties);
    ``predict_proba`` is the mean member probability."""

    members: list
    n_classes: int
    input_dim: int
    kind: str = "ensemble"

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sum(m.predict_proba(X) for m in self.members) / len(self.members)

    def votes(self, X: np.ndarray) -> np.ndarray:
        counts = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for m in self.members:
            counts[rows, m.predict(X)] += 1
        return counts

    def predict(self, X: np.ndarray) -> np.ndarray:
        return argmax_lowest(self.votes(X))

    def to_dict(self) -> dict:
        return {"members": [model_to_dict(m) for m in self.members]}

    @classmethod
    def from_dict(cls, kind, n_classes, input_dim, d) -> "EnsembleModel":
        return cls([model_from_dict(m) for m in d["members"]], n_classes, input_dim)


ClassifierModel = NeuralModel | ForestModel | EnsembleModel

_KINDS = {"softmax": NeuralModel, "mlp": NeuralModel, "random_forest": ForestModel, "ensemble": EnsembleModel}


def _as_matrix(model, features) -> tuple[np.ndarray, bool]:
    X = getattr(features, "features", features)
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(1, -1) if single else X.reshape(len(X), -1)
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} features, got {X.shape[1]}")
    return X, single


def predict_proba(model, features) -> np.ndarray:
    """Class probabilities, one simplex row per example (a single vector for 1-D input)."""
    X, single = _as_matrix(model, features)
    p = model.predict_proba(X)
    return p[0] if single else p


def predict(model, features) -> np.ndarray:
    X, single = _as_matrix(model, features)
    y = model.predict(X)
    return y[0] if single else y


def model_to_dict(model) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "n_classes": model.n_classes,
        "input_dim": model.input_dim,
        "parameters": model.to_dict(),
    }


def model_from_dict(d: dict):
    if d.get("format") != FORMAT_NAME:
        raise FormatError("not a poisonbench model document")
    if d.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model version {d.get('version')}")
    kind = d["kind"]
    if kind not in _KINDS:
        raise FormatError(f"unknown model kind {kind!r}")
    return _KINDS[kind].from_dict(kind, int(d["n_classes"]), int(d["input_dim"]), d["parameters"])


def save_model(model, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)), encoding="utf-8")


def load_model(path: str | os.PathLike):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
