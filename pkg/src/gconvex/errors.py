"""Exception hierarchy shared by all modules."""


class GConvexError(Exception):
    """Base class for toolkit errors."""


class DomainError(GConvexError, ValueError):
    """A point left the open domain of a field, or a path/step escaped it."""


class NumericalError(GConvexError, ArithmeticError):
    """Non-finite values, failed factorizations, non-convergence."""


class MetricError(NumericalError):
    """A metric evaluation failed the SPD test."""


class ModelError(GConvexError, ValueError):
    """A problem definition violates a structural assumption (skew symmetry, p_min, ...)."""
