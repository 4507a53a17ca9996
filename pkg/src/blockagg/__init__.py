"""Aggregated state updates for lightweight blockchain clients on a fading link.

The package bundles an authenticated state trie with multi-inclusion proofs,
closed-form frame/delay analytics, a seeded protocol simulator and the
obfuscation-set builder used for subscription privacy.
"""

from .errors import (
    BlockAggError,
    BudgetTooSmallError,
    ConfigError,
    DataError,
    MissingKeyError,
    NotActiveError,
    ValidityError,
)
from .params import DEFAULT_PARAMS, SystemParams, db_to_linear, linear_to_db
from .pmf import BitPmf

__all__ = [
    "BitPmf",
    "BlockAggError",
    "BudgetTooSmallError",
    "ConfigError",
    "DataError",
    "MissingKeyError",
    "NotActiveError",
    "DEFAULT_PARAMS",
    "SystemParams",
    "ValidityError",
    "db_to_linear",
    "linear_to_db",
]

__version__ = "0.1.0"
