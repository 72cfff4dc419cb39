import json
import os

import numpy as np
import pytest

from poisonbench.attacks import PoisonReport, PoisonSpec, apply_poisons
from poisonbench.errors import ExperimentError, ValidationError
from poisonbench.experiment import (
    BASELINE,
    DEFENDED,
    POISONED,
    ExperimentConfig,
    ExperimentResult,
    bundled_config,
    emit_reports,
    prepare,
    render_reports,
    run_experiment,
    run_repeat,
    summary_rows,
)
from poisonbench.experiment.cli import main
from poisonbench.experiment.config import derive_seed
from poisonbench.experiment.runner import POISON_STREAM, fingerprint


def tiny_images(**overrides):
    d = {
        "name": "tiny",
        "dataset": {"type": "synthetic_images", "n_per_class": 24, "seed": 1, "normalization": "standardize"},
        "split": {"test_fraction": 0.25},
        "poisons": [
            {"variant": "label_flip_targeted", "params": {"from_class": "cat", "to_class": "dog", "rate": 0.2}},
            {"variant": "instance_replace", "params": {"class_a": "cat", "class_b": "dog", "count": 2}},
        ],
        "learner": {"kind": "mlp", "epochs": 3, "batch_size": 8, "learning_rate": 0.05, "hidden_dims": [8]},
        "defense": {"type": "knn_sanitize", "k": 3},
        "repeats": 2,
        "base_seed": 5,
        "analysis": {"confusion_pair": ["cat", "dog"]},
    }
    d.update(overrides)
    return d


def tiny_claims(**overrides):
    d = {
        "name": "claims",
        "dataset": {"type": "synthetic_claims", "n": 600, "fraud_rate": 0.2, "seed": 2},
        "poisons": [
            {"variant": "label_flip_targeted", "params": {"from_class": "fraud", "to_class": "non_fraud", "rate": 0.1}}
        ],
        "learner": {"kind": "random_forest", "n_trees": 5, "min_leaf": 5},
        "defense": {"type": "centroid_anomaly_filter", "z_threshold": 3.0},
        "repeats": 2,
    }
    d.update(overrides)
    return d


@pytest.fixture(scope="module")
def image_result():
    return run_experiment(ExperimentConfig.from_dict(tiny_images()))


# --- configuration -----------------------------------------------------------


@pytest.mark.parametrize("name", ["cifar_catdog", "claims_fraud", "cifar10_catdog", "cifar10_full_reference", "claims_full_reference"])
def test_bundled_configs_validate(name):
    cfg = ExperimentConfig.from_dict(bundled_config(name))
    assert cfg.repeats >= 1
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize(
    "patch",
    [
        {"dataset": {"type": "mystery"}},
        {"dataset": {"type": "synthetic_claims", "n": 10}},
        {"repeats": 0},
        {"learner": {"kind": "mlp", "learning_rate": -1}},
        {"poisons": [{"variant": "noise_injection", "params": {"rate": 0.1, "magnitude": 0.1}}]},
    ],
)
def test_invalid_configs_rejected(patch):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(tiny_claims(**patch))


def test_missing_config_file(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        ExperimentConfig.load(tmp_path / "nope.json")


def test_derive_seed_is_stable():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)


# --- orchestration -----------------------------------------------------------


def test_no_poison_means_identical_models():
    cfg = ExperimentConfig.from_dict(tiny_images(poisons=[], defense=None, repeats=1))
    rep = run_repeat(cfg, 0)
    assert rep["status"] == "ok"
    assert rep["metrics"][BASELINE] == rep["metrics"][POISONED]
    assert rep["traces"][BASELINE] == rep["traces"][POISONED]
    assert rep["poison_rate"] == 0.0


def test_run_is_deterministic(image_result, tmp_path):
    again = run_experiment(ExperimentConfig.from_dict(tiny_images()))
    assert again.to_json() == image_result.to_json()
    a, b = tmp_path / "a", tmp_path / "b"
    emit_reports(image_result, a)
    emit_reports(again, b)
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_parallel_matches_serial(image_result):
    par = run_experiment(ExperimentConfig.from_dict(tiny_images()), jobs=2)
    assert par.to_json() == image_result.to_json()


def test_repeats_are_isolated(image_result):
    # a run with only the second repeat reproduces it exactly
    cfg = ExperimentConfig.from_dict(tiny_images())
    second = run_repeat(cfg, 1)
    assert json.dumps(second, sort_keys=True) == json.dumps(image_result.repeats[1], sort_keys=True)
    assert image_result.repeats[0]["poison_reports"] != image_result.repeats[1]["poison_reports"]


def test_delta_is_exact_mean_difference(image_result):
    for variant in (POISONED, DEFENDED):
        s = image_result.aggregate["comparisons"][variant]["accuracy"]
        base = image_result.metric_samples(BASELINE, "accuracy")
        other = image_result.metric_samples(variant, "accuracy")
        assert s["baseline_mean"] == np.mean(base) and s["other_mean"] == np.mean(other)
        assert s["delta"] == s["other_mean"] - s["baseline_mean"]


def test_test_split_untouched_by_poisoning():
    cfg = ExperimentConfig.from_dict(tiny_images())
    rep = run_repeat(cfg, 0)
    data = prepare(cfg, cfg.run_seed(0))
    assert fingerprint(data.test) == rep["test_fingerprint"]
    poisoned_ids = set(PoisonReport.merge([PoisonReport.from_dict(r) for r in rep["poison_reports"]], 1).indices)
    assert poisoned_ids <= set(data.train.indices.tolist())
    assert not poisoned_ids & set(data.test.indices.tolist())


def test_manifest_replay_reproduces_poisoned_set():
    cfg = ExperimentConfig.from_dict(tiny_images())
    rep = run_repeat(cfg, 1)
    data = prepare(cfg, cfg.run_seed(1))
    specs = [PoisonSpec.from_dict(s) for s in rep["poison_specs"]]
    assert specs[0].seed == derive_seed(cfg.run_seed(1), POISON_STREAM, 0)
    _, reports = apply_poisons(data.unit_train, specs)
    assert [r.to_dict() for r in reports] == rep["poison_reports"]


def test_tabular_experiment_with_detection():
    res = run_experiment(ExperimentConfig.from_dict(tiny_claims()))
    assert res.aggregate["n_ok"] == 2
    assert {"precision", "recall", "f1"} <= set(res.aggregate["detection"])
    fr = res.aggregate["comparisons"][POISONED]
    assert "false_positive_rate" in fr and "recall[fraud]" in fr and "auc" in fr


def test_all_repeats_failing_raises():
    bad = tiny_images(poisons=[{"variant": "instance_replace", "params": {"class_a": "cat", "class_b": "dog", "count": 500}}])
    with pytest.raises(ExperimentError, match="all 2 repeats failed"):
        run_experiment(ExperimentConfig.from_dict(bad))


# --- reports -----------------------------------------------------------------


def test_report_files(image_result, tmp_path):
    files = render_reports(image_result)
    assert {"summary.csv", "defense_summary.csv", "result.json", "loss_curves.csv", "confusion_baseline.csv"} <= set(files)
    rows = files["loss_curves.csv"].decode().splitlines()
    # header + epochs x repeats x trained models
    assert len(rows) == 1 + 3 * 2 * 3
    summary = files["summary.csv"].decode().splitlines()
    assert summary[0] == "Experiment,Metric,Baseline,Poisoned,Delta"
    assert summary[1].startswith("tiny,accuracy,")
    back = ExperimentResult.from_dict(json.loads(files["result.json"]))
    assert render_reports(back) == files


def test_summary_delta_example():
    agg = {
        "comparisons": {
            POISONED: {
                "accuracy": {
                    "baseline_mean": 0.85,
                    "other_mean": 0.578,
                    "delta": 0.578 - 0.85,
                    "baseline_std": 0.01,
                    "other_std": 0.02,
                }
            }
        }
    }
    res = ExperimentResult({"name": "catdog"}, ["cat", "dog"], [], agg)
    (row,) = summary_rows(res)
    assert row[:2] == ["catdog", "accuracy"]
    assert row[2] == "0.85 ± 0.01" and row[3] == "0.578 ± 0.02"
    assert float(row[4]) == pytest.approx(-0.272, abs=1e-9)


def test_unusable_output_dir_writes_nothing(image_result, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_reports(image_result, blocker)
    with pytest.raises(OSError):
        emit_reports(image_result, blocker / "sub")
    assert blocker.read_text() == "x"
    assert sorted(os.listdir(tmp_path)) == ["file"]


# --- command line ------------------------------------------------------------


def write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_pipeline(tmp_path, capsys):
    cfg = write_cfg(tmp_path, tiny_images(repeats=1))
    assert main(["ingest", "--config", cfg, "--out", str(tmp_path / "i")]) == 0
    assert (tmp_path / "i" / "dataset.bin").stat().st_size == 48 * 3073
    assert main(["poison", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "poison_manifest.csv").exists()
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t"), "--poisoned"]) == 0
    model = str(tmp_path / "t" / "model.json")
    capsys.readouterr()
    assert main(["evaluate", "--config", cfg, "--model", model]) == 0
    assert 0 <= json.loads(capsys.readouterr().out)["accuracy"] <= 1
    assert main(["defend", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    capsys.readouterr()
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "r"), "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("Experiment,Metric")
    assert main(["report", "--result", str(tmp_path / "r" / "result.json"), "--out", str(tmp_path / "r2")]) == 0
    for name in os.listdir(tmp_path / "r"):
        assert (tmp_path / "r" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_cli_exit_codes(tmp_path):
    ok = write_cfg(tmp_path, tiny_claims(repeats=1, defense=None))
    assert main(["run", "--config", ok, "--out", str(tmp_path / "o")]) == 0
    # validation problems
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 1
    assert main(["run", "--config", write_cfg(tmp_path, {"dataset": {}}, "bad.json")]) == 1
    assert main(["run", "--config", ok, "--repeats", "0"]) == 1
    # runtime failure: every repeat fails
    bad = tiny_images(poisons=[{"variant": "instance_replace", "params": {"class_a": "cat", "class_b": "dog", "count": 500}}])
    assert main(["run", "--config", write_cfg(tmp_path, bad, "fail.json"), "--out", str(tmp_path / "f")]) == 2
    # output path is a regular file
    (tmp_path / "blocker").write_text("")
    assert main(["run", "--config", ok, "--out", str(tmp_path / "blocker")]) == 3
