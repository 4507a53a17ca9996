"""Exception hierarchy shared by all modules."""


class BlockAggError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BlockAggError, ValueError):
    """Invalid parameters or simulator configuration."""


class MissingKeyError(BlockAggError, KeyError):
    """A key requested in a proof is not present in the trie."""


class ValidityError(BlockAggError):
    """The analytical model is evaluated outside its regime of validity."""


class DataError(BlockAggError, ValueError):
    """Malformed or inconsistent input data (CSV files, frequency tables)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotActiveError(BlockAggError, ValueError):
    """The secret account does not satisfy the activity predicate."""


class BudgetTooSmallError(BlockAggError, ValueError):
    """The communication budget cannot accommodate even the secret account."""
