"""Declarative experiments: config, orchestration, reports and the CLI."""

from poisonbench.experiment.config import ExperimentConfig, bundled_config, derive_seed, load_schema
from poisonbench.experiment.reports import emit_reports, render_reports, summary_rows
from poisonbench.experiment.runner import (
    BASELINE,
    DEFENDED,
    POISONED,
    ExperimentResult,
    aggregate,
    prepare,
    run_experiment,
    run_repeat,
)

__all__ = [
    "BASELINE",
    "DEFENDED",
    "POISONED",
    "ExperimentConfig",
    "ExperimentResult",
    "aggregate",
    "bundled_config",
    "derive_seed",
    "emit_reports",
    "load_schema",
    "prepare",
    "render_reports",
    "run_experiment",
    "run_repeat",
    "summary_rows",
]
