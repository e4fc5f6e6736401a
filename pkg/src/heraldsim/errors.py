class HeraldSimError(Exception):
    """Base class for every error raised by heraldsim."""

    exit_code: int = 2

    def __init__(self, message: str):
        super().__init__(message)


class UsageError(HeraldSimError):
    """Raised when the command line is used incorrectly."""

    exit_code = 1


class ConfigurationError(HeraldSimError):
    """Raised when a configuration or metadata value is missing or inconsistent."""

    exit_code = 1


class DomainError(HeraldSimError):
    """Raised when an argument lies outside the domain of a formula."""


class PreconditionError(HeraldSimError):
    """Raised when input data violates a precondition (e.g. unsorted timetags)."""


class DataFormatError(HeraldSimError):
    """Raised when a tag, histogram or manifest file cannot be parsed."""


class ResourceLimitError(HeraldSimError):
    """Raised when a request would exceed the configured event-count capacity."""


class EstimationError(HeraldSimError):
    """Raised when an estimator has insufficient signal to produce a value."""

    exit_code = 3


class FitError(EstimationError):
    """Raised when a least-squares fit does not converge."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
