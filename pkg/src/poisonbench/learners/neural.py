"""Mini-batch gradient descent on softmax cross-entropy for softmax/MLP models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from poisonbench.data_ingest.split import stratified_split
from poisonbench.data_ingest.types import IMAGE_SHAPE, Dataset
from poisonbench.errors import DivergedTrainingError, ValidationError
from poisonbench.learners.augment import augment_batch
from poisonbench.learners.config import NEURAL_KINDS, TrainingConfig
from poisonbench.learners.models import NeuralModel, softmax


@dataclass
class TrainingTrace:
    """Per-epoch metrics. ``val_*`` lists are empty when no validation slice was held out."""

    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    initial_loss: float | None = None
    best_epoch: int | None = None

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "initial_loss": self.initial_loss,
            "best_epoch": self.best_epoch,
            "train_loss": list(self.train_loss),
            "train_acc": list(self.train_acc),
            "val_loss": list(self.val_loss),
            "val_acc": list(self.val_acc),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingTrace":
        return cls(
            train_loss=list(d["train_loss"]),
            train_acc=list(d["train_acc"]),
            val_loss=list(d["val_loss"]),
            val_acc=list(d["val_acc"]),
            initial_loss=d.get("initial_loss"),
            best_epoch=d.get("best_epoch"),
        )


def detect_overfit_epoch(trace, patience: int) -> int | None:
    """First epoch (1-indexed) whose validation loss then fails to improve for ``patience`` epochs.

    Walks the curve like early stopping: the running best is reset whenever
    the loss strictly improves, and the best epoch is returned as soon as
    ``patience`` consecutive later epochs do not beat it.
    """
    if patience < 1:
        raise ValidationError("patience must be >= 1")
    losses = trace.val_loss if hasattr(trace, "val_loss") else list(trace)
    best, best_epoch, stale = np.inf, None, 0
    for epoch, loss in enumerate(losses, start=1):
        if loss < best:
            best, best_epoch, stale = loss, epoch, 0
        else:
            stale += 1
            if stale >= patience:
                return best_epoch
    return None


def init_model(kind: str, input_dim: int, n_classes: int, hidden_dims, seed: int, init_scale=None) -> NeuralModel:
    """Hidden layers get uniform weights in ``[-s, s]`` (``s = 1/sqrt(fan_in)`` by default);
    the output layer and all biases start at zero, so the initial loss is ``ln K``."""
    rng = np.random.default_rng(seed)
    dims = [input_dim] + (list(hidden_dims) if kind == "mlp" else []) + [n_classes]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            W = np.zeros((fan_in, fan_out))
        else:
            s = init_scale if init_scale is not None else 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-s, s, size=(fan_in, fan_out))
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return NeuralModel(kind, weights, biases, n_classes, input_dim)


def cross_entropy(model: NeuralModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-example cross-entropy loss."""
    logits = model.logits(X)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return log_norm - z[np.arange(len(y)), y]


def loss_and_grads(model: NeuralModel, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient for every weight and bias.

    Gradients are returned in :meth:`NeuralModel.parameters` order
    (``W0, b0, W1, b1, ...``).
    """
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    n = len(y)
    z = h - h.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(s[:, 0]) - z[np.arange(n), y]))
    delta = e / s
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * (2 * len(model.weights))
    for i in range(last, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, grads


def _evaluate(model, X, y):
    losses = cross_entropy(model, X, y)
    acc = float(np.mean(model.predict(X) == y))
    return float(losses.mean()), acc


def _copy(model: NeuralModel) -> NeuralModel:
    return NeuralModel(model.kind, [W.copy() for W in model.weights], [b.copy() for b in model.biases], model.n_classes, model.input_dim)


def train_classifier(ds: Dataset, config: TrainingConfig, n_classes: int | None = None):
    """Train a softmax or MLP classifier; returns ``(model, trace)``.

    With ``validation_fraction > 0`` a stratified validation slice is carved
    out of ``ds`` (seeded by ``config.seed``) and excluded from training.
    Image inputs (``N x 32 x 32 x 3``) are flattened, and augmented per batch
    when ``config.augmentation`` is on.
    """
    if config.kind not in NEURAL_KINDS:
        raise ValidationError(f"train_classifier handles {NEURAL_KINDS}, got {config.kind!r}")
    if len(ds) == 0:
        raise ValidationError("cannot train on an empty dataset")
    k = n_classes if n_classes is not None else ds.n_classes
    is_image = ds.features.shape[1:] == IMAGE_SHAPE
    input_dim = int(np.prod(ds.features.shape[1:]))
    model = init_model(config.kind, input_dim, k, config.hidden_dims, config.seed, config.init_scale)
    trace = TrainingTrace()

    train, val = ds, None
    if config.validation_fraction > 0:
        split = stratified_split(ds, config.validation_fraction, config.seed)
        train, val = ds.take(split.train_indices), ds.take(split.test_indices)
    X = train.features.reshape(len(train), -1).astype(np.float64)
    y = train.labels
    Xv = val.features.reshape(len(val), -1).astype(np.float64) if val is not None and len(val) else None

    trace.initial_loss = float(cross_entropy(model, X, y).mean())
    if config.epochs == 0:
        return model, trace

    rng = np.random.default_rng([config.seed, 1])
    images = train.features if is_image and config.augmentation else None
    best, best_val, stale = None, np.inf, 0
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = augment_batch(images[idx], rng).reshape(len(idx), -1) if images is not None else X[idx]
            loss, grads = loss_and_grads(model, xb, y[idx])
            if not np.isfinite(loss):
                raise DivergedTrainingError(epoch, float(loss))
            for param, g in zip(model.parameters(), grads):
                param -= config.learning_rate * g
        tl, ta = _evaluate(model, X, y)
        if not np.isfinite(tl):
            raise DivergedTrainingError(epoch, tl)
        trace.train_loss.append(tl)
        trace.train_acc.append(ta)
        if Xv is not None:
            vl, va = _evaluate(model, Xv, val.labels)
            if not np.isfinite(vl):
                raise DivergedTrainingError(epoch, vl)
            trace.val_loss.append(vl)
            trace.val_acc.append(va)
            if config.early_stopping_patience is not None:
                if vl < best_val:
                    best_val, best, stale = vl, _copy(model), 0
                    trace.best_epoch = epoch
                else:
                    stale += 1
                    if stale >= config.early_stopping_patience:
                        break
    if best is not None:
        model = best
    return model, trace
