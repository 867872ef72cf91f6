"""Exception and warning types shared across the package."""


class RgpMpcError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(RgpMpcError, ArithmeticError):
    """A Cholesky pivot stayed non-positive after jitter was applied."""


class DimensionMismatch(RgpMpcError, ValueError):
    pass


class EmptySet(RgpMpcError, ValueError):
    """An operation needed at least one training point."""


class Infeasible(RgpMpcError):
    """No point satisfying the hard constraints was found."""


class ConstraintViolation(RgpMpcError, ValueError):
    pass


class BudgetExhausted(UserWarning):
    """Hyperparameter search stopped on its iteration budget; best-so-far returned."""
