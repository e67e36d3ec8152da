"""Exception types shared across the package.

Plain ``ValueError`` is used for bad arguments (out-of-range class index,
invalid alpha, ...). The classes below mark failures that callers typically
want to catch separately from programming errors.
"""


class DataError(ValueError):
    """Input data violates a documented invariant (bad probability row,
    NaN score, score outside [0, 1], ...)."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent or infeasible."""


class ParseError(ValueError):
    """A file could not be parsed; the message carries the line number."""


class NumericError(RuntimeError):
    """A numeric routine failed to meet its tolerance."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""
