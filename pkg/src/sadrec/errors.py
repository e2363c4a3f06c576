"""Exception hierarchy shared across the package."""


class SadrecError(Exception):
    """Base class for all package errors."""


class ContractViolationError(SadrecError):
    """An operation was called with arguments that break its contract."""


class DataError(SadrecError):
    """Malformed or unusable input data; message carries file/line context."""


class EmptyDatasetError(DataError):
    """Loading or filtering produced a dataset with no interactions."""


class CheckpointError(SadrecError):
    """Checkpoint file is missing sections, has bad dims, or invalid values."""


class DiagnosticLimitError(SadrecError):
    """A dense diagnostic was requested at a scale it is not meant for."""


class DivergedTrainingError(SadrecError):
    """Non-finite parameters appeared during SGD."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class DivergedChainError(SadrecError):
    """Non-finite state appeared during Gibbs sampling."""

    def __init__(self, sweep: int, message: str | None = None):
        self.sweep = sweep
        super().__init__(message or f"chain diverged at sweep {sweep}")
