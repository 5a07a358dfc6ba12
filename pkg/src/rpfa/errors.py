"""Exception hierarchy shared across the package."""


class RPFAError(Exception):
    """Base class for all package errors."""


class SchemaError(RPFAError):
    """A mapped CSV column is missing from the input header."""

    def __init__(self, column: str):
        super().__init__(f"missing mapped column: {column!r}")
        self.column = column


class ParseError(RPFAError):
    """A single input row could not be parsed."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ValidationError(RPFAError):
    """Input parsed, but violates a dataset invariant (e.g. duplicate opportunity)."""


class OrderingError(RPFAError):
    """A (student, KC) group cannot be put in a well-defined order."""


class EmptyInputError(RPFAError):
    pass


class ParameterError(RPFAError, ValueError):
    """A numeric parameter lies outside its allowed range."""


class UndefinedRatioError(RPFAError, ZeroDivisionError):
    """The recency-weighted proportion has an empty denominator."""


class ConfigurationError(RPFAError):
    """Incompatible model / feature / fitting configuration."""


class UnknownEntityError(RPFAError, KeyError):
    """Prediction requested for a KC or student the model never saw."""


class ShapeError(RPFAError, ValueError):
    pass


class ConvergenceError(RPFAError):
    """Raised only in strict mode when IRLS fails to converge."""
