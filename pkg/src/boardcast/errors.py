"""Exception hierarchy shared across the package.

``ValidationError`` and its subclasses mean the caller supplied bad input or
configuration (CLI exit code 1); ``RuntimeFailure`` subclasses mean a step
failed while executing (CLI exit code 2).
"""


class BoardcastError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(BoardcastError):
    """Invalid input, configuration, or arguments."""


class RangeError(ValidationError):
    """A timestamp or index falls outside its allowed range."""


class DataGapError(ValidationError):
    """A required record (e.g. the context row for an hour) is missing."""

    def __init__(self, message: str, hour_ts=None):
        super().__init__(message)
        self.hour_ts = hour_ts


class DuplicateKeyError(ValidationError):
    """Two records share a key that must be unique (e.g. hour_ts)."""


class DegenerateColumnError(ValidationError):
    """A non-exempt column is constant, so standardization is undefined."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "constant non-exempt column(s), cannot standardize: "
            + ", ".join(self.columns)
        )


class SchemaMismatchError(ValidationError):
    """Columns, shapes, or scaler schema do not match what a model expects."""


class RuntimeFailure(BoardcastError):
    """A pipeline step failed during execution."""


class TrainingFailure(RuntimeFailure):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, last_finite_epoch: int | None = None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class TuningError(RuntimeFailure):
    """Every tuning trial failed; carries per-trial diagnostics."""

    def __init__(self, message: str, trials=None):
        super().__init__(message)
        self.trials = trials or []


class InsufficientDataError(RuntimeFailure):
    """Not enough contiguous history to build a forecast window."""


class MissingModelError(RuntimeFailure):
    """No active model registered for one or more requested horizons."""

    def __init__(self, message: str, horizons=None):
        super().__init__(message)
        self.horizons = list(horizons or [])


class StorageConflictError(RuntimeFailure):
    """An insert violated a storage uniqueness constraint."""
