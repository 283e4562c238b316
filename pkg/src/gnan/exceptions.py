"""Exception hierarchy shared by the library and the CLI."""


class GnanError(Exception):
    """Base class for all errors raised by :mod:`gnan`."""

    exit_code = 1


class ConfigError(GnanError, ValueError):
    """Invalid configuration, hyperparameters or command-line usage."""

    exit_code = 1


class DataError(GnanError, ValueError):
    """Base class for malformed or inconsistent input data."""

    exit_code = 2


class ParseError(DataError):
    """A dataset file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    path : str, optional
        File being read.
    location : int or str, optional
        Line number (1-based) or record identifier.
    """

    def __init__(self, message, path=None, location=None):
        self.path = None if path is None else str(path)
        self.location = location
        where = ""
        if self.path is not None:
            where = self.path
            if location is not None:
                where += f":{location}"
            where += ": "
        super().__init__(where + message)


class SchemaError(DataError):
    """Feature dimension or task metadata does not match."""


class GraphValidationError(DataError):
    """A graph violates a structural invariant (e.g. dangling edge index)."""


class ContractError(GnanError, ValueError):
    """Arguments violate an API contract (shape mismatch, stale cache, ...)."""

    exit_code = 2


class NumericError(GnanError, ArithmeticError):
    """Non-finite values encountered in a computation."""

    exit_code = 3


class UndefinedMetricError(GnanError, ValueError):
    """A metric is undefined on the given data (e.g. ROC-AUC on one class)."""

    exit_code = 3
