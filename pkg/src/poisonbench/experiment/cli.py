"""Command-line entry point: ``poisonbench <command> --config cfg.json ...``.

Exit codes: 0 success, 1 validation error, 2 runtime/training error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from poisonbench.attacks import PoisonReport, apply_poisons
from poisonbench.data_ingest import (
    ImageDataset,
    TabularDataset,
    tabular_to_csv,
    serialize_cifar10_batch,
)
from poisonbench.defenses import evaluate_detection
from poisonbench.errors import PoisonBenchError, ValidationError
from poisonbench.experiment.config import ExperimentConfig, bundled_config
from poisonbench.experiment.reports import emit_reports
from poisonbench.experiment.runner import (
    ExperimentResult,
    apply_defense,
    evaluate_model,
    load_source,
    prepare,
    resolve_poisons,
    run_experiment,
)
from poisonbench.learners import fit, load_model, save_model

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("poisonbench")


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ValidationError("--config is required")
    if args.config.startswith("bundled:"):
        cfg = ExperimentConfig.from_dict(bundled_config(args.config.split(":", 1)[1]))
        cfg.resolve_paths(Path.cwd())
    else:
        cfg = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.base_seed = args.seed
    if getattr(args, "repeats", None) is not None:
        if args.repeats < 1:
            raise ValidationError("--repeats must be >= 1")
        cfg.repeats = args.repeats
    return cfg


def _out_dir(args) -> Path:
    if args.out is None:
        raise ValidationError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict, args, name: str) -> None:
    text = json.dumps(payload, indent=1) + "\n"
    if args.out:
        (_out_dir(args) / name).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_ingest(args) -> None:
    cfg = _load_config(args)
    source, fixed_test = load_source(cfg.dataset)
    summary = {
        "type": cfg.dataset["type"],
        "n": len(source),
        "class_names": list(source.class_names),
        "class_counts": [int((source.labels == c).sum()) for c in range(source.n_classes)],
    }
    if fixed_test is not None:
        summary["n_test"] = len(fixed_test)
    if args.out:
        out = _out_dir(args)
        if isinstance(source, TabularDataset):
            (out / "dataset.csv").write_bytes(tabular_to_csv(source).encode("utf-8"))
        else:
            # labels are positions in classes.json, not canonical CIFAR-10 ids
            (out / "dataset.bin").write_bytes(serialize_cifar10_batch(source))
            (out / "classes.json").write_text(json.dumps(list(source.class_names)) + "\n", encoding="utf-8")
    _emit(summary, args, "ingest_summary.json")


def _poisoned(cfg: ExperimentConfig):
    seed = cfg.run_seed(0)
    data = prepare(cfg, seed)
    specs = resolve_poisons(cfg, data.train.class_names, seed)
    src = data.unit_train if data.unit_train is not None else data.train
    poisoned_src, reports = apply_poisons(src, specs)
    poisoned = data.to_model(poisoned_src) if data.to_model is not None else poisoned_src
    return data, specs, poisoned_src, poisoned, reports


def cmd_poison(args) -> None:
    cfg = _load_config(args)
    out = _out_dir(args)
    data, specs, poisoned_src, _, reports = _poisoned(cfg)
    merged = PoisonReport.merge(reports, len(data.train))
    (out / "poison_manifest.csv").write_text(merged.to_csv(), encoding="utf-8")
    manifest = {"specs": [s.to_dict() for s in specs], "reports": [r.to_dict() for r in reports]}
    (out / "poison_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    if isinstance(poisoned_src, ImageDataset):
        (out / "poisoned_train.bin").write_bytes(serialize_cifar10_batch(poisoned_src))
    else:
        source, _ = load_source(cfg.dataset)
        raw = source.at(_positions(source, poisoned_src.indices)).with_labels(poisoned_src.labels)
        (out / "poisoned_train.csv").write_bytes(tabular_to_csv(raw).encode("utf-8"))
    print(json.dumps({"poisoned": len(merged.indices), "train_size": len(data.train), "achieved_rate": merged.achieved_rate}))


def _positions(table: TabularDataset, ids):
    lookup = {int(i): p for p, i in enumerate(table.indices)}
    return [lookup[int(i)] for i in ids]


def cmd_train(args) -> None:
    cfg = _load_config(args)
    out = _out_dir(args)
    if args.poisoned:
        data, _, _, train, _ = _poisoned(cfg)
    else:
        data = prepare(cfg, cfg.run_seed(0))
        train = data.train
    model, trace = fit(train, cfg.learner_for(cfg.run_seed(0)), train.n_classes)
    save_model(model, out / "model.json")
    (out / "trace.json").write_text(json.dumps(trace.to_dict(), indent=1) + "\n", encoding="utf-8")
    print(json.dumps({"model": str(out / "model.json"), "epochs": trace.epochs}))


def cmd_evaluate(args) -> None:
    cfg = _load_config(args)
    if args.model is None:
        raise ValidationError("--model is required for evaluate")
    model = load_model(args.model)
    data = prepare(cfg, cfg.run_seed(0))
    report = evaluate_model(model, data.test)
    if args.format == "csv":
        text = report.confusion.to_csv(data.test.class_names)
        if args.out:
            (_out_dir(args) / "confusion.csv").write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    else:
        _emit(report.to_dict(), args, "metrics.json")


def cmd_defend(args) -> None:
    cfg = _load_config(args)
    if not cfg.defense:
        raise ValidationError("config has no defense section")
    out = _out_dir(args)
    data, _, _, poisoned, reports = _poisoned(cfg)
    learner = cfg.learner_for(cfg.run_seed(0))
    model, trace, det = apply_defense(cfg, poisoned, learner, poisoned.n_classes)
    save_model(model, out / "defended_model.json")
    payload = {"metrics": evaluate_model(model, data.test).to_dict()}
    if det is not None:
        (out / "detection.csv").write_text(det.to_csv(), encoding="utf-8")
        payload["detection"] = evaluate_detection(det, reports, valid_ids=data.train.indices.tolist()).to_dict()
    (out / "defense.json").write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(payload.get("detection", {})))


def cmd_run(args) -> None:
    cfg = _load_config(args)
    result = run_experiment(cfg, jobs=args.jobs)
    out = _out_dir(args)
    emit_reports(result, out)
    if args.format == "json":
        print(json.dumps(result.aggregate.get("comparisons", {}).get("poisoned", {}).get("accuracy", {})))
    else:
        sys.stdout.write((out / "summary.csv").read_text(encoding="utf-8"))


def cmd_report(args) -> None:
    if args.result is None:
        raise ValidationError("--result is required for report")
    try:
        raw = json.loads(Path(args.result).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.result}: not valid JSON ({exc})") from None
    result = ExperimentResult.from_dict(raw)
    emit_reports(result, _out_dir(args))


COMMANDS = {
    "ingest": cmd_ingest,
    "poison": cmd_poison,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "defend": cmd_defend,
    "run": cmd_run,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisonbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON, or bundled:<name>")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--repeats", type=int, help="override repeats")
        p.add_argument("--jobs", type=int, default=1, help="parallel repeats")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if name == "train":
            p.add_argument("--poisoned", action="store_true", help="train on the poisoned training split")
        if name == "evaluate":
            p.add_argument("--model", help="model JSON from `train`")
        if name == "report":
            p.add_argument("--result", help="result.json bundle from `run`")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PoisonBenchError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
