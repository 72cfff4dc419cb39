"""Training hyperparameters shared by every learner."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from poisonbench.errors import ValidationError

NEURAL_KINDS = ("softmax", "mlp")
FOREST_KIND = "random_forest"


@dataclass(frozen=True)
class TrainingConfig:
    kind: str = "mlp"
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    hidden_dims: tuple[int, ...] = (64,)
    validation_fraction: float = 0.0
    augmentation: bool = False
    seed: int = 0
    # None -> 1/sqrt(fan_in) uniform bound for hidden layers
    init_scale: float | None = None
    early_stopping_patience: int | None = None
    # forest
    n_trees: int = 25
    max_depth: int | None = None
    min_leaf: int = 1
    # "sqrt", a fraction in (0, 1], an integer count, or None for all features
    feature_subsample: str | float | int | None = "sqrt"
    bootstrap: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind not in NEURAL_KINDS + (FOREST_KIND,):
            raise ValidationError(f"unknown learner kind {self.kind!r}")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValidationError("validation_fraction must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.kind == "softmax" and self.hidden_dims:
            object.__setattr__(self, "hidden_dims", ())
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            raise ValidationError("early_stopping_patience must be >= 1")

    def with_seed(self, seed: int) -> "TrainingConfig":
        return self.replace(seed=seed)

    def replace(self, **changes) -> "TrainingConfig":
        d = asdict(self)
        d.update(changes)
        return TrainingConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown learner settings: {sorted(unknown)}")
        return cls(**d)
