"""Clean vs poisoned vs defended experiment orchestration."""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from poisonbench.attacks import PoisonReport, PoisonSpec, apply_poisons
from poisonbench.data_ingest import (
    CIFAR10_CLASSES,
    Dataset,
    ImageDataset,
    channel_stats,
    encode_tabular,
    generate_insurance_claims,
    normalize_images,
    read_cifar10_batches,
    read_tabular_csv,
    select_classes,
    stratified_split,
    synthetic_cifar_subset,
)
from poisonbench.defenses import (
    centroid_anomaly_filter,
    ensemble_train_vote,
    evaluate_detection,
    knn_sanitize,
    trimmed_robust_train,
)
from poisonbench.errors import ExperimentError, PoisonBenchError, ValidationError
from poisonbench.experiment.config import ExperimentConfig, derive_seed
from poisonbench.learners import TrainingTrace, detect_overfit_epoch, fit, predict, predict_proba
from poisonbench.metrics import (
    MetricsReport,
    auc_roc,
    classification_report,
    confusion_matrix,
    cross_count,
    misclassification_increase,
    run_statistics,
)

log = logging.getLogger(__name__)

BASELINE, POISONED, DEFENDED = "baseline", "poisoned", "defended"
POISON_STREAM = 101
IMAGE_KINDS = ("cifar10", "synthetic_images")


@dataclass
class PreparedData:
    """One repeat's clean training split and untouched test split.

    For images, ``unit_train`` holds [0, 1] pixels for the attacks and
    ``to_model`` maps [0, 1] pixels to learner inputs.
    """

    train: Dataset
    test: Dataset
    unit_train: Dataset | None = None
    to_model: object = None


@functools.lru_cache(maxsize=4)
def _load_source(dataset_json: str):
    """Raw dataset plus an optional fixed test set; independent of the run seed."""
    spec = json.loads(dataset_json)
    kind = spec["type"]
    if kind == "synthetic_images":
        classes = spec.get("classes", ["cat", "dog"])
        ds = synthetic_cifar_subset(spec["n_per_class"], spec.get("seed", 0), classes, **spec.get("generator", {}))
        return ds, None
    if kind == "cifar10":
        classes = spec["classes"]
        train = select_classes(read_cifar10_batches(spec["train_paths"], CIFAR10_CLASSES), classes, spec.get("train_per_class"))
        test = None
        if spec.get("test_paths"):
            test = read_cifar10_batches(spec["test_paths"], CIFAR10_CLASSES)
            # keep ids disjoint from the training batches
            test = test.replace(indices=test.indices + 10_000_000)
            test = select_classes(test, classes, spec.get("test_per_class"))
        return train, test
    if kind == "synthetic_claims":
        return generate_insurance_claims(spec["n"], spec["fraud_rate"], spec.get("seed", 0)), None
    return read_tabular_csv(spec["path"], spec.get("categorical")), None


def load_source(dataset: dict):
    return _load_source(json.dumps(dataset, sort_keys=True))


def prepare(config: ExperimentConfig, seed: int) -> PreparedData:
    source, fixed_test = load_source(config.dataset)
    kind = config.dataset["type"]
    if fixed_test is not None:
        train_ids, test_ids = tuple(source.indices.tolist()), tuple(fixed_test.indices.tolist())
    else:
        split = stratified_split(source, config.test_fraction, seed)
        train_ids, test_ids = split.train_indices, split.test_indices

    if kind in IMAGE_KINDS:
        full = source if fixed_test is None else ImageDataset(
            features=np.concatenate([source.features, fixed_test.features]),
            labels=np.concatenate([source.labels, fixed_test.labels]),
            indices=np.concatenate([source.indices, fixed_test.indices]),
            class_names=source.class_names,
        )
        unit = normalize_images(full, "unit_interval")
        mode = config.dataset.get("normalization", "unit_interval")
        if mode == "standardize":
            # statistics from the clean training split, shared by every model
            mu, sigma, _ = channel_stats(full, train_ids)
            to_model = functools.partial(_standardize, mu=mu, sigma=sigma)
        else:
            to_model = _identity
        unit_train = unit.take(train_ids)
        return PreparedData(
            train=to_model(unit_train),
            test=to_model(unit.take(test_ids)),
            unit_train=unit_train,
            to_model=to_model,
        )
    encoded = encode_tabular(source, train_ids).to_dataset()
    return PreparedData(train=encoded.take(train_ids), test=encoded.take(test_ids))


def _identity(ds):
    return ds


def _standardize(ds, mu, sigma):
    return ds.with_features((ds.features - mu) / sigma)


def resolve_class(value, class_names) -> int:
    if isinstance(value, str):
        if value not in class_names:
            raise ValidationError(f"unknown class {value!r}; choose from {list(class_names)}")
        return class_names.index(value)
    return int(value)


def resolve_poisons(config: ExperimentConfig, class_names, seed: int) -> list[PoisonSpec]:
    specs = []
    for i, p in enumerate(config.poisons):
        params = dict(p["params"])
        for key in ("from_class", "to_class", "class_a", "class_b"):
            if key in params:
                params[key] = resolve_class(params[key], list(class_names))
        specs.append(PoisonSpec(p["variant"], params, derive_seed(seed, POISON_STREAM, i)))
    return specs


def evaluate_model(model, test: Dataset) -> MetricsReport:
    y_pred = predict(model, test.flat_features())
    cm = confusion_matrix(test.labels, y_pred, test.n_classes)
    report = classification_report(cm)
    if test.n_classes == 2 and 0 < test.labels.sum() < len(test):
        proba = predict_proba(model, test.flat_features())
        report.auc = auc_roc(proba[:, 1], test.labels)
    return report


def fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.indices).tobytes())
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    h.update(np.ascontiguousarray(ds.features, dtype=np.float64).tobytes())
    return h.hexdigest()


def apply_defense(config: ExperimentConfig, poisoned: Dataset, learner, k: int):
    """Returns ``(model, trace, detection_report_or_None)``."""
    d = config.defense
    kind = d["type"]
    if kind == "knn_sanitize":
        cleaned, report = knn_sanitize(poisoned, d["k"], d.get("mode", "relabel"))
    elif kind == "centroid_anomaly_filter":
        cleaned, report = centroid_anomaly_filter(poisoned, d["z_threshold"])
    elif kind == "trimmed_robust_train":
        model, report, trace = trimmed_robust_train(
            poisoned, learner, d["trim_fraction"], d.get("rounds", 1), k, return_trace=True
        )
        return model, trace, report
    else:
        model = ensemble_train_vote(poisoned, learner, d["n_members"], d.get("bootstrap", True), k)
        return model, TrainingTrace(), None
    model, trace = fit(cleaned, learner, k)
    return model, trace, report


def run_repeat(config: ExperimentConfig, repeat: int) -> dict:
    seed = config.run_seed(repeat)
    out = {"repeat": repeat, "seed": seed}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out.update(_run_repeat(config, seed))
        out["warnings"] = sorted({str(w.message) for w in caught})
        out["status"] = "ok"
    except (PoisonBenchError, ArithmeticError, ValueError) as exc:
        log.warning("repeat %d failed: %s", repeat, exc)
        out = {"repeat": repeat, "seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return out


def _run_repeat(config: ExperimentConfig, seed: int) -> dict:
    data = prepare(config, seed)
    k = data.train.n_classes
    learner = config.learner_for(seed)
    specs = resolve_poisons(config, data.train.class_names, seed)

    source = data.unit_train if data.unit_train is not None else data.train
    poisoned_src, reports = apply_poisons(source, specs)
    poisoned = data.to_model(poisoned_src) if data.to_model is not None else poisoned_src

    test_print = fingerprint(data.test)
    models, traces = {}, {}
    models[BASELINE], traces[BASELINE] = fit(data.train, learner, k)
    models[POISONED], traces[POISONED] = fit(poisoned, learner, k)
    detection = None
    if config.defense:
        models[DEFENDED], traces[DEFENDED], det_report = apply_defense(config, poisoned, learner, k)
        if det_report is not None:
            score = evaluate_detection(det_report, reports, valid_ids=data.train.indices.tolist())
            detection = {"report": det_report.to_dict(), "score": score.to_dict()}
    if fingerprint(data.test) != test_print:
        raise PoisonBenchError("test split was modified during the repeat")

    metrics = {name: evaluate_model(m, data.test) for name, m in models.items()}
    result = {
        "train_size": len(data.train),
        "test_size": len(data.test),
        "test_fingerprint": test_print,
        "poison_specs": [s.to_dict() for s in specs],
        "poison_reports": [r.to_dict() for r in reports],
        "poison_rate": PoisonReport.merge(reports, len(data.train)).achieved_rate,
        "metrics": {name: m.to_dict() for name, m in metrics.items()},
        "traces": {name: t.to_dict() for name, t in traces.items()},
        "detection": detection,
    }
    patience = config.analysis.get("overfit_patience")
    if patience:
        result["overfit_epoch"] = {
            name: detect_overfit_epoch(t, patience) for name, t in traces.items()
        }
    pair = config.analysis.get("confusion_pair")
    if pair:
        a, b = (resolve_class(c, list(data.train.class_names)) for c in pair)
        base_cm = metrics[BASELINE].confusion
        result["cross_confusions"] = {name: cross_count(m.confusion, a, b) for name, m in metrics.items()}
        try:
            result["misclassification_increase"] = misclassification_increase(base_cm, metrics[POISONED].confusion, a, b)
        except PoisonBenchError:
            result["misclassification_increase"] = None
    return result


@dataclass
class ExperimentResult:
    config: dict
    class_names: list
    repeats: list
    aggregate: dict = field(default_factory=dict)

    @property
    def ok_repeats(self) -> list:
        return [r for r in self.repeats if r["status"] == "ok"]

    def metric_samples(self, variant: str, metric: str) -> list[float]:
        out = []
        for r in self.ok_repeats:
            if variant in r["metrics"]:
                out.append(MetricsReport.from_dict(r["metrics"][variant]).scalars(self.class_names)[metric])
        return out

    def to_dict(self) -> dict:
        return {
            "format": "poisonbench-result",
            "version": 1,
            "config": self.config,
            "class_names": self.class_names,
            "repeats": self.repeats,
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        if d.get("format") != "poisonbench-result":
            raise ValidationError("not a poisonbench result bundle")
        return cls(d["config"], d["class_names"], d["repeats"], d.get("aggregate", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"


def _summary_stats(base: list, other: list) -> dict:
    mean_b, mean_o = float(np.mean(base)), float(np.mean(other))
    entry = {
        "baseline_mean": mean_b,
        "other_mean": mean_o,
        "delta": mean_o - mean_b,
        "baseline_std": None,
        "other_std": None,
        "t": None,
        "df": None,
        "p_value": None,
    }
    if len(base) >= 2 and len(other) >= 2:
        st = run_statistics(base, other).to_dict()
        entry.update(
            baseline_std=st["std_a"],
            other_std=st["std_b"],
            t=st["t"],
            df=st["df"],
            p_value=st["p_value"],
        )
    return entry


def aggregate(result: ExperimentResult) -> dict:
    ok = result.ok_repeats
    if not ok:
        return {}
    names = result.class_names
    metric_names = list(MetricsReport.from_dict(ok[0]["metrics"][BASELINE]).scalars(names))
    agg = {"n_ok": len(ok), "seeds": [r["seed"] for r in ok], "comparisons": {}, "confusion_totals": {}}
    variants = [v for v in (POISONED, DEFENDED) if v in ok[0]["metrics"]]
    for variant in variants:
        comp = {}
        for m in metric_names:
            comp[m] = _summary_stats(result.metric_samples(BASELINE, m), result.metric_samples(variant, m))
        agg["comparisons"][variant] = comp
    for variant in [BASELINE] + variants:
        total = None
        for r in ok:
            c = np.array(r["metrics"][variant]["confusion"], dtype=np.int64)
            total = c if total is None else total + c
        agg["confusion_totals"][variant] = total.tolist()
    dets = [r["detection"]["score"] for r in ok if r.get("detection")]
    if dets:
        agg["detection"] = {
            key: float(np.mean([d[key] for d in dets])) for key in ("precision", "recall", "f1")
        }
    if DEFENDED in variants:
        gap = agg["comparisons"][POISONED]["accuracy"]["delta"]
        recovered = agg["comparisons"][DEFENDED]["accuracy"]["other_mean"] - agg["comparisons"][POISONED]["accuracy"]["other_mean"]
        agg["accuracy_gap_recovered"] = recovered / -gap if gap < 0 else None
    if "cross_confusions" in ok[0]:
        agg["cross_confusions"] = {
            v: int(sum(r["cross_confusions"][v] for r in ok)) for v in [BASELINE] + variants
        }
        base = agg["cross_confusions"][BASELINE]
        agg["misclassification_increase"] = (
            100.0 * (agg["cross_confusions"][POISONED] - base) / base if base else None
        )
    return agg


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run every repeat (optionally in parallel processes) and aggregate in repeat order."""
    repeats = range(config.repeats)
    if jobs > 1 and config.repeats > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_repeat, [config] * config.repeats, repeats))
    else:
        rows = [run_repeat(config, r) for r in repeats]
    source, _ = load_source(config.dataset)
    result = ExperimentResult(config.to_dict(), list(source.class_names), rows)
    if not result.ok_repeats:
        errors = "; ".join(r["error"] for r in rows)
        raise ExperimentError(f"all {len(rows)} repeats failed: {errors}")
    result.aggregate = aggregate(result)
    return result
