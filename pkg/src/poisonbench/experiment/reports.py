"""Summary table, JSON bundle and plot-data files for an experiment result."""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from poisonbench.experiment.runner import BASELINE, DEFENDED, POISONED, ExperimentResult
from poisonbench.metrics import ConfusionMatrix

SUMMARY_COLUMNS = ["Experiment", "Metric", "Baseline", "Poisoned", "Delta"]
LOSS_COLUMNS = ["repeat", "model", "epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


def _num(x) -> str:
    return "" if x is None else format(x, ".6g")


def _mean_std(mean, std) -> str:
    return _num(mean) if std is None else f"{_num(mean)} ± {_num(std)}"


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def summary_rows(result: ExperimentResult, variant: str = POISONED) -> list[list[str]]:
    """One row per metric: baseline and ``variant`` as ``mean ± std`` plus their delta."""
    name = result.config.get("name", "experiment")
    comp = result.aggregate.get("comparisons", {}).get(variant, {})
    rows = []
    for metric, s in comp.items():
        rows.append(
            [
                name,
                metric,
                _mean_std(s["baseline_mean"], s["baseline_std"]),
                _mean_std(s["other_mean"], s["other_std"]),
                _num(s["delta"]),
            ]
        )
    return rows


def loss_curve_rows(result: ExperimentResult) -> list[list]:
    rows = []
    for rep in result.ok_repeats:
        for model, tr in rep["traces"].items():
            for e in range(tr["epochs"]):
                val_loss = tr["val_loss"][e] if e < len(tr["val_loss"]) else None
                val_acc = tr["val_acc"][e] if e < len(tr["val_acc"]) else None
                rows.append(
                    [
                        rep["repeat"],
                        model,
                        e + 1,
                        repr(tr["train_loss"][e]),
                        repr(tr["train_acc"][e]),
                        "" if val_loss is None else repr(val_loss),
                        "" if val_acc is None else repr(val_acc),
                    ]
                )
    return rows


def render_reports(result: ExperimentResult) -> dict[str, bytes]:
    """Every output file, keyed by relative name. Pure function of ``result``."""
    files = {}
    files["summary.csv"] = _csv([SUMMARY_COLUMNS] + summary_rows(result, POISONED))
    if DEFENDED in result.aggregate.get("comparisons", {}):
        header = ["Experiment", "Metric", "Baseline", "Defended", "Delta"]
        files["defense_summary.csv"] = _csv([header] + summary_rows(result, DEFENDED))
    files["result.json"] = result.to_json()
    for variant, counts in result.aggregate.get("confusion_totals", {}).items():
        cm = ConfusionMatrix(np.array(counts, dtype=np.int64))
        files[f"confusion_{variant}.csv"] = cm.to_csv(result.class_names)
    files["loss_curves.csv"] = _csv([LOSS_COLUMNS] + loss_curve_rows(result))
    for rep in result.ok_repeats:
        r = rep["repeat"]
        manifest = [["spec", "index", "kind", "original_label", "new_label"]]
        for s, report in enumerate(rep["poison_reports"]):
            manifest += [[s] + list(e) for e in report["entries"]]
        files[f"poison_manifest_r{r}.csv"] = _csv(manifest)
        if rep.get("detection"):
            det = [["index", "action", "new_label", "score"]]
            det += [[i, a, "" if n is None else n, repr(float(sc))] for i, a, n, sc in rep["detection"]["report"]["flagged"]]
            files[f"detection_r{r}.csv"] = _csv(det)
    return {k: v.encode("utf-8") for k, v in files.items()}


def emit_reports(result: ExperimentResult, out_dir: str | os.PathLike) -> list[Path]:
    """Write all report files; fails with ``OSError`` before writing anything if ``out_dir`` is unusable."""
    files = render_reports(result)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK | os.X_OK):
        raise PermissionError(f"output directory is not writable: {out}")
    written = []
    for name in sorted(files):
        path = out / name
        path.write_bytes(files[name])
        written.append(path)
    return written
