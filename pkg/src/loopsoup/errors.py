"""Exception types shared across the package."""


class LoopSoupError(Exception):
    """Base class for all package errors."""


class SingularGenerator(LoopSoupError):
    pass


class NegativeRate(LoopSoupError):
    pass


class InfiniteMass(LoopSoupError):
    pass


class CutoffTooLarge(LoopSoupError):
    pass


class KernelMismatch(LoopSoupError):
    pass


class EnumerationBudget(LoopSoupError):
    pass


class BudgetTooSmall(LoopSoupError):
    pass


class QuadratureFailure(LoopSoupError):
    pass


class UnsupportedDimension(LoopSoupError):
    pass


class ConfigError(LoopSoupError):
    pass
