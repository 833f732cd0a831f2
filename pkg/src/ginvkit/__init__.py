"""Minimal-norm generalized inverses of wide real matrices.

Computes the entrywise lp-minimal generalized inverse ginv_p(A) for
1 <= p <= 2 of a full-row-rank wide matrix A (the sparse pseudoinverse
at p=1, the Moore-Penrose pseudoinverse at p=2) and predicts where the
normalized squared Frobenius norm (n/m)*||X||_F^2 concentrates, via
closed forms, a scalar saddle equation, and Monte Carlo experiments.
"""

from .errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    GinvkitError,
    MatrixFormatError,
    PrecisionError,
    RankError,
    SingularityError,
)

__version__ = "0.1.0"

__all__ = [
    "GinvkitError",
    "DimensionError",
    "DomainError",
    "MatrixFormatError",
    "RankError",
    "SingularityError",
    "ConvergenceError",
    "PrecisionError",
    "__version__",
]
