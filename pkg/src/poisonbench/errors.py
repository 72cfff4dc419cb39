"""Exception and warning types shared across the harness.

The CLI maps these onto exit codes: validation problems exit 1, training or
other runtime failures exit 2, I/O failures exit 3.
"""


class PoisonBenchError(Exception):
    """Base class for harness errors."""


class ValidationError(PoisonBenchError, ValueError):
    """Bad arguments, malformed configs, or inputs violating a precondition."""


class FormatError(ValidationError):
    """A binary or text file does not follow its declared layout."""


class CorruptRecordError(FormatError):
    """A record parsed structurally but carries an impossible value."""


class ShapeError(ValidationError):
    """Feature dimensions do not match what a model expects."""


class UndefinedMetricError(ValidationError):
    """A metric has no defined value for the given inputs."""


class DivergedTrainingError(PoisonBenchError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class ExperimentError(PoisonBenchError, RuntimeError):
    """Every repeat of an experiment failed."""


class PoisonBenchWarning(UserWarning):
    """Recoverable degenerate input (zero variance, unseen levels, ...)."""
