"""Exception types shared across the package."""

from __future__ import annotations


class ContractViolation(ValueError):
    """An argument or state violated a documented precondition."""


class ResampleBudgetError(RuntimeError):
    """Rejection sampling exhausted its retry budget.

    Carries ``tries_used`` so callers can diagnose a proposal whose
    acceptance rate collapsed.
    """

    def __init__(self, message: str, tries_used: int):
        super().__init__(message)
        self.tries_used = tries_used


class ConfigurationError(ValueError):
    """A run configuration referenced missing artifacts or bad values."""
