"""Exception types shared across the package.

Everything user-facing derives from GinvkitError so callers (and the CLI)
can distinguish domain/solver failures from programming errors.
"""


class GinvkitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GinvkitError, ValueError):
    """A matrix or vector has an unusable shape (empty, mismatched, ...)."""


class DomainError(GinvkitError, ValueError):
    """A scalar argument lies outside its mathematical domain."""


class MatrixFormatError(GinvkitError, ValueError):
    """A matrix file is unreadable or contains non-finite entries."""


class RankError(GinvkitError):
    """A factorization found the matrix numerically rank deficient.

    `index` is the offending diagonal position of the triangular factor.
    """

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class SingularityError(GinvkitError):
    """Every sampled submatrix was numerically singular (retry cap hit)."""


class ConvergenceError(GinvkitError):
    """The iterative solver hit its iteration cap before the tolerances.

    Carries the worst per-column residuals at the point of failure.
    """

    def __init__(self, message, primal_residual, dual_residual, columns_unconverged):
        super().__init__(message)
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.columns_unconverged = columns_unconverged


class PrecisionError(GinvkitError):
    """Monte Carlo noise is too large for the requested resolution."""
