"""Exception types shared across the package."""


class SchemaError(ValueError):
    """A record does not match the declared predicate schema."""


class ShapeError(ValueError):
    """Array or vector dimensions are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the supplied data (e.g. a single class)."""


class MissingDataError(ValueError):
    """Required observations are missing."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during computation."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class TrainingDiverged(NumericError):
    """Loss became non-finite; ``params`` holds the last finite parameters."""

    def __init__(self, message, params=None, trace=None):
        super().__init__(message)
        self.params = params
        self.trace = trace or []
