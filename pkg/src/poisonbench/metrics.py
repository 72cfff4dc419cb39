"""Evaluation metrics: confusion matrices, per-class scores, AUC, and cross-seed statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _stats

from poisonbench.errors import UndefinedMetricError, ValidationError


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_list(self) -> list:
        return self.counts.tolist()

    def to_csv(self, class_names=None) -> str:
        names = list(class_names) if class_names is not None else [str(i) for i in range(self.n_classes)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, self.counts.tolist()):
            w.writerow([name] + row)
        return buf.getvalue()


def confusion_matrix(y_true, y_pred, n_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if len(y_true) != len(y_pred):
        raise ValidationError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted labels")
    for name, y in (("true", y_true), ("predicted", y_pred)):
        if len(y) and (y.min() < 0 or y.max() >= n_classes):
            raise ValidationError(f"{name} labels must lie in 0..{n_classes - 1}")
    counts = np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


@dataclass
class MetricsReport:
    accuracy: float
    precision: list
    recall: list
    f1: list
    macro_f1: float
    confusion: ConfusionMatrix
    false_positive_rate: float | None = None
    auc: float | None = None
    positive_class: int | None = None

    def scalars(self, class_names=None) -> dict:
        """Flat ``name -> value`` view used for aggregation across repeats."""
        names = list(class_names) if class_names is not None else [str(i) for i in range(len(self.f1))]
        out = {"accuracy": self.accuracy, "macro_f1": self.macro_f1}
        for c, name in enumerate(names):
            out[f"precision[{name}]"] = self.precision[c]
            out[f"recall[{name}]"] = self.recall[c]
            out[f"f1[{name}]"] = self.f1[c]
        if self.false_positive_rate is not None:
            out["false_positive_rate"] = self.false_positive_rate
        if self.auc is not None:
            out["auc"] = self.auc
        return out

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "macro_f1": self.macro_f1,
            "false_positive_rate": self.false_positive_rate,
            "auc": self.auc,
            "positive_class": self.positive_class,
            "confusion": self.confusion.to_list(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            accuracy=d["accuracy"],
            precision=list(d["precision"]),
            recall=list(d["recall"]),
            f1=list(d["f1"]),
            macro_f1=d["macro_f1"],
            confusion=ConfusionMatrix(np.array(d["confusion"], dtype=np.int64)),
            false_positive_rate=d.get("false_positive_rate"),
            auc=d.get("auc"),
            positive_class=d.get("positive_class"),
        )


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def classification_report(cm: ConfusionMatrix, positive_class: int | None = None) -> MetricsReport:
    """Accuracy and per-class precision/recall/F1 (0/0 counts as 0).

    For two-class matrices the false positive rate is reported for
    ``positive_class`` (default 1).
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise UndefinedMetricError("metrics are undefined for an empty confusion matrix")
    diag = np.diag(c)
    precision = [_ratio(diag[i], c[:, i].sum()) for i in range(cm.n_classes)]
    recall = [_ratio(diag[i], c[i, :].sum()) for i in range(cm.n_classes)]
    f1 = [f1_score(p, r) for p, r in zip(precision, recall)]
    fpr = None
    if cm.n_classes == 2:
        positive_class = 1 if positive_class is None else positive_class
        neg = 1 - positive_class
        fp, tn = c[neg, positive_class], c[neg, neg]
        fpr = _ratio(fp, fp + tn)
    return MetricsReport(
        accuracy=float(diag.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(np.mean(f1)),
        confusion=cm,
        false_positive_rate=fpr,
        positive_class=positive_class,
    )


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney pair statistic (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(scores) != len(labels):
        raise ValidationError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative example")
    ranks = _stats.rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def cross_count(cm: ConfusionMatrix, class_a: int, class_b: int) -> int:
    return int(cm.counts[class_a, class_b] + cm.counts[class_b, class_a])


def misclassification_increase(cm_base: ConfusionMatrix, cm_poisoned: ConfusionMatrix, class_a: int, class_b: int) -> float:
    """Percent change in a<->b confusions (both directions summed)."""
    if cm_base.n_classes != cm_poisoned.n_classes:
        raise ValidationError("confusion matrices differ in class count")
    base = cross_count(cm_base, class_a, class_b)
    pois = cross_count(cm_poisoned, class_a, class_b)
    if base == 0:
        raise UndefinedMetricError(
            f"baseline has no {class_a}<->{class_b} confusions (poisoned has {pois}); increase is undefined"
        )
    return 100.0 * (pois - base) / base


@dataclass
class RunStatistics:
    """Welch two-sample comparison of one metric across seeds.

    Degenerate variance: equal means give ``t = 0, p = 1``; different means
    give ``t = +/-inf, p = 0``.
    """

    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    t: float
    df: float
    p_value: float
    n_a: int
    n_b: int
    seeds: list = field(default_factory=list)

    @property
    def delta(self) -> float:
        return self.mean_b - self.mean_a

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for key in ("t", "df"):
            if not math.isfinite(d[key]):
                d[key] = str(d[key])
        return d


def run_statistics(samples_a, samples_b, seeds=None) -> RunStatistics:
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValidationError("each sample needs at least 2 values")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    se2 = va / len(a) + vb / len(b)
    diff = ma - mb
    if se2 == 0:
        if diff == 0:
            t, df, p = 0.0, float(len(a) + len(b) - 2), 1.0
        else:
            t, df, p = math.copysign(math.inf, diff), float(len(a) + len(b) - 2), 0.0
    else:
        t = diff / math.sqrt(se2)
        df = se2**2 / ((va / len(a)) ** 2 / (len(a) - 1) + (vb / len(b)) ** 2 / (len(b) - 1))
        p = float(min(1.0, 2.0 * _stats.t.sf(abs(t), df)))
    return RunStatistics(ma, mb, math.sqrt(va), math.sqrt(vb), float(t), float(df), p, len(a), len(b), list(seeds or []))
