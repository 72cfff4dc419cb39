"""Experiment configuration: JSON documents validated against ``schema.json``."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from poisonbench.errors import ValidationError
from poisonbench.learners.config import TrainingConfig

DEFAULT_TEST_FRACTION = 0.2


def load_schema() -> dict:
    return json.loads(resources.files("poisonbench.experiment").joinpath("schema.json").read_text("utf-8"))


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    learner: TrainingConfig
    test_fraction: float = DEFAULT_TEST_FRACTION
    validation_fraction: float | None = None
    poisons: list = field(default_factory=list)
    defense: dict | None = None
    repeats: int = 1
    base_seed: int = 0
    analysis: dict = field(default_factory=dict)

    def run_seed(self, repeat: int) -> int:
        return self.base_seed + repeat

    def learner_for(self, seed: int) -> TrainingConfig:
        cfg = self.learner.with_seed(seed)
        if self.validation_fraction is not None:
            cfg = cfg.replace(validation_fraction=self.validation_fraction)
        return cfg

    def to_dict(self) -> dict:
        split = {"test_fraction": self.test_fraction}
        if self.validation_fraction is not None:
            split["validation_fraction"] = self.validation_fraction
        d = {
            "name": self.name,
            "dataset": copy.deepcopy(self.dataset),
            "split": split,
            "poisons": copy.deepcopy(self.poisons),
            "learner": self.learner.to_dict(),
            "defense": copy.deepcopy(self.defense),
            "repeats": self.repeats,
            "base_seed": self.base_seed,
        }
        if self.analysis:
            d["analysis"] = copy.deepcopy(self.analysis)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ValidationError(f"config invalid at {where}: {exc.message}") from None
        ds = d["dataset"]
        kind = ds["type"]
        need = {
            "cifar10": ("train_paths", "classes"),
            "synthetic_images": ("n_per_class",),
            "synthetic_claims": ("n", "fraud_rate"),
            "csv": ("path",),
        }[kind]
        missing = [k for k in need if k not in ds]
        if missing:
            raise ValidationError(f"{kind} dataset needs {missing}")
        split = d.get("split", {})
        learner = TrainingConfig.from_dict(d["learner"])
        if kind not in ("cifar10", "synthetic_images") and any(p["variant"] == "noise_injection" for p in d.get("poisons", [])):
            raise ValidationError("noise_injection applies to image datasets only")
        return cls(
            name=d.get("name", "experiment"),
            dataset=copy.deepcopy(ds),
            learner=learner,
            test_fraction=split.get("test_fraction", DEFAULT_TEST_FRACTION),
            validation_fraction=split.get("validation_fraction"),
            poisons=copy.deepcopy(d.get("poisons", [])),
            defense=copy.deepcopy(d.get("defense")),
            repeats=d.get("repeats", 1),
            base_seed=d.get("base_seed", 0),
            analysis=copy.deepcopy(d.get("analysis", {})),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
        cfg = cls.from_dict(raw)
        cfg.resolve_paths(Path(path).parent)
        return cfg

    def resolve_paths(self, base: Path) -> None:
        """Make dataset paths relative to the config file absolute, and check they exist."""
        ds = self.dataset
        for key in ("train_paths", "test_paths"):
            if key in ds:
                ds[key] = [str((base / p).resolve()) for p in ds[key]]
        if "path" in ds:
            ds["path"] = str((base / ds["path"]).resolve())
        for p in ds.get("train_paths", []) + ds.get("test_paths", []) + ([ds["path"]] if "path" in ds else []):
            if not Path(p).exists():
                raise ValidationError(f"dataset file not found: {p}")


def bundled_config(name: str) -> dict:
    """Load one of the shipped configs (``cifar_catdog``, ``claims_fraud``, ...)."""
    path = resources.files("poisonbench").joinpath("configs", f"{name}.json")
    if not path.is_file():
        raise ValidationError(f"no bundled config named {name!r}")
    return json.loads(path.read_text("utf-8"))
