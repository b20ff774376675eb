"""Exception types raised by the simulation pipeline."""
from __future__ import annotations


class ChiralQEDError(Exception):
    """Base class for all package errors."""


class ConfigError(ChiralQEDError, ValueError):
    """Invalid or inconsistent configuration value."""

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


class NumericalError(ChiralQEDError, ArithmeticError):
    """A numerical stage could not produce a trustworthy result."""


class NotPositiveDefinite(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class OutOfBand(NumericalError):
    pass


class CutoffTooSmall(NumericalError):
    pass


class NotHermitian(NumericalError):
    pass


class DegenerateGround(NumericalError):
    pass


class SingularKernel(NumericalError):
    pass


class BudgetExhausted(ChiralQEDError):
    """The optimizer ran out of evaluations; ``result`` holds the best point found."""

    def __init__(self, message: str, result: object) -> None:
        super().__init__(message)
        self.result = result
