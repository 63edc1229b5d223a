"""Exception types shared across the package."""


class MbfieldError(Exception):
    """Base class for all package errors."""


class ConfigError(MbfieldError):
    """Invalid run configuration (maps to CLI exit code 2)."""


class ParseError(ConfigError):
    """Config file could not be parsed; message carries line/column."""


class ValidationError(ConfigError):
    """Config parsed but a field failed validation."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"invalid config field: {field}")


class NumericError(MbfieldError):
    """Numeric failure during a solve (maps to CLI exit code 3)."""


class BudgetError(MbfieldError):
    """Requested computation exceeds a hard resource budget (exit code 4)."""


class NonSquare(ValueError, MbfieldError):
    pass


class NegativeEntry(ValueError, MbfieldError):
    def __init__(self, i, j, value):
        self.i, self.j, self.value = i, j, value
        super().__init__(f"D[{i},{j}] = {value} is negative")


class CapacityExceeded(BudgetError):
    pass


class TimeOutOfRange(ValueError, MbfieldError):
    pass


class StateCountMismatch(ValueError, MbfieldError):
    pass


class AliveSetOutOfRange(ValueError, MbfieldError):
    pass


class LevelNotBuilt(MbfieldError):
    def __init__(self, config):
        self.config = config
        super().__init__(f"decoupling field level for {config} has not been built")


class DimensionUnsupported(MbfieldError):
    pass


class StabilityViolation(BudgetError):
    pass


class NotOnOrOutsideBoundary(MbfieldError):
    pass


class BracketNotFound(NumericError):
    pass


class StateSpaceExceeded(BudgetError):
    pass


class MaxIterExceeded(NumericError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class ShapeMismatch(ValueError, MbfieldError):
    pass


class FieldNotBuilt(MbfieldError):
    pass


class BumpTooLargeForGrid(ValueError, MbfieldError):
    pass


class NoRoot(NumericError):
    pass


class NoConvergence(NumericError):
    def __init__(self, message, last_iterate=None, trace=None):
        self.last_iterate = last_iterate
        self.trace = trace
        super().__init__(message)
