"""
errors.py — Exception hierarchy.

The CLI turns these into exit codes:
  InvalidInputError -> 2   (bad spec, violated precondition)
  NumericalError    -> 3   (singular volatility, overflow)
"""


class MarketError(Exception):
    """Base class for every error raised by isomarket."""


class InvalidInputError(MarketError, ValueError):
    pass


class NumericalError(MarketError, ArithmeticError):
    pass


class GroupTooLargeError(InvalidInputError):
    pass


class CasinoRequiredError(InvalidInputError):
    pass


class NonDeterministicAmprError(InvalidInputError):
    pass


class OverflowGuardError(NumericalError):
    pass


class SingularVolatilityError(NumericalError):
    def __init__(self, message: str, path: int | None = None, step: int | None = None):
        super().__init__(message)
        self.path = path
        self.step = step
