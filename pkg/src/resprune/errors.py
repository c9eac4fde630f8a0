"""Exception hierarchy shared by every subpackage.

The CLI maps these onto exit codes: configuration problems exit 2, I/O
problems exit 3 and numeric faults exit 4.
"""
from __future__ import annotations


class ResPruneError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(ResPruneError, ValueError):
    """An operation received arguments outside its documented contract."""


class ConfigError(ResPruneError, ValueError):
    """Invalid configuration value or key; ``key`` names the offending setting."""

    def __init__(self, message: str = "", key: str | None = None):
        super().__init__(message)
        self.key = key


class DegenerateInputError(ContractViolation):
    """Input is well-shaped but carries no usable data (e.g. empty batch)."""


class DegenerateModelError(ContractViolation):
    """An operation would produce a model with an empty layer."""


class NumericFaultError(ResPruneError, ArithmeticError):
    """A non-finite value appeared during forward or training."""


class IngestionError(ResPruneError, OSError):
    """A required data file is missing or unreadable."""


class CorruptionError(IngestionError):
    """A data file exists but does not have the expected layout."""
