"""Exception hierarchy shared by every module of the package."""


class CvForecastError(Exception):
    """Base class for all package errors."""


class ContractError(CvForecastError, ValueError):
    """A caller violated a documented precondition."""


class ParseError(CvForecastError):
    """A trajectory or series file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CvForecastError):
    """Parsed data violates a dataset invariant."""


class DataIntegrityError(CvForecastError):
    """Cross-record references are inconsistent (e.g. a missing leader)."""


class GenerationError(CvForecastError):
    """The synthetic generator could not satisfy its invariants."""


class AggregationError(CvForecastError):
    """A frame could not be aggregated into a flow parameter."""

    def __init__(self, message, frame_id=None):
        self.frame_id = frame_id
        super().__init__(message)


class NumericError(CvForecastError, ArithmeticError):
    """A numerical recursion produced a non-finite or invalid value."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class DegenerateInputError(CvForecastError):
    """The input carries no information for the requested estimate."""


class TrainingError(CvForecastError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class FitError(CvForecastError):
    """A statistical model failed to fit."""


class SelectionError(CvForecastError):
    """Model-order selection failed in every grid cell."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class MetricError(CvForecastError):
    """A metric is undefined for the given inputs."""

    def __init__(self, message, indices=None):
        self.indices = list(indices) if indices is not None else []
        super().__init__(message)
