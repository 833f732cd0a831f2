"""Dense matrices, random ensembles, and the QR-based pseudoinverse.

Matrices are plain 2-D C-contiguous float64 numpy arrays (row-major).
Random sampling is built on a counter-based bit generator keyed by
(seed, stream_id), with every distribution derived from the uniform
doubles inside this module, so a given (seed, stream_id) reproduces the
identical entry sequence everywhere.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, MatrixFormatError, RankError

# zero-mean, unit-entry-variance laws
ENSEMBLE_KINDS = ("gaussian", "laplace", "rademacher", "uniform")

_U64 = 2**64
_SQRT3 = math.sqrt(3.0)
_LAPLACE_SCALE = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class RngStream:
    """Addresses one reproducible random stream as (seed, stream_id).

    Distinct stream_ids (e.g. trial indices) give independent streams
    under the same seed. The stream itself is stateful; call open() to
    get a cursor that draws from it.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, int) or not (0 <= v < _U64):
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def open(self):
        return StreamCursor(self)


class StreamCursor:
    """Sequential draws from one stream.

    The draw sequence is fixed by the stream alone: requesting 5 normals
    and then 5 more yields the same values as requesting 10 at once
    (a Box-Muller half-pair is carried over, never discarded).
    """

    def __init__(self, rng: RngStream):
        key = (rng.seed << 64) | rng.stream_id
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._carry = None

    def uniforms(self, count: int) -> np.ndarray:
        """`count` iid uniforms on [0, 1)."""
        return self._gen.random(count)

    def normals(self, count: int) -> np.ndarray:
        """`count` iid standard normals via Box-Muller on the uniform stream."""
        out = np.empty(count)
        pos = 0
        if self._carry is not None and count > 0:
            out[0] = self._carry
            self._carry = None
            pos = 1
        remaining = count - pos
        if remaining <= 0:
            return out
        pairs = (remaining + 1) // 2
        u = self._gen.random(2 * pairs)
        # 1 - u1 lies in (0, 1], so the log is finite
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        phi = (2.0 * math.pi) * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(phi)
        z[1::2] = r * np.sin(phi)
        out[pos:] = z[:remaining]
        if remaining % 2 == 1:
            self._carry = z[-1]
        return out

    def index_subset(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), by partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise DomainError(f"cannot draw {k} distinct indices from {n}")
        idx = np.arange(n)
        u = self.uniforms(k)
        for j in range(k):
            pick = j + int(u[j] * (n - j))  # u < 1 keeps pick < n
            idx[j], idx[pick] = idx[pick], idx[j]
        return idx[:k].copy()


def sample_matrix(kind: str, m: int, n: int, rng: RngStream) -> np.ndarray:
    """m-by-n matrix of iid entries from a named zero-mean unit-variance law."""
    if kind not in ENSEMBLE_KINDS:
        raise DomainError(f"unknown ensemble kind {kind!r}; choose from {ENSEMBLE_KINDS}")
    if m < 1 or n < 1:
        raise DimensionError(f"matrix dimensions must be positive, got {m}x{n}")
    cur = rng.open()
    count = m * n
    if kind == "gaussian":
        flat = cur.normals(count)
    else:
        u = cur.uniforms(count)
        if kind == "rademacher":
            flat = np.where(u < 0.5, -1.0, 1.0)
        elif kind == "uniform":
            flat = _SQRT3 * (2.0 * u - 1.0)
        else:  # laplace, scale 1/sqrt(2) so the variance is 1
            w = 2.0 * np.minimum(u, 1.0 - u)
            # w = 0 has probability 2^-53 per draw; the floor keeps entries finite
            w = np.maximum(w, 1e-300)
            flat = np.where(u < 0.5, 1.0, -1.0) * (_LAPLACE_SCALE * np.log(w))
    return np.ascontiguousarray(flat.reshape(m, n))


def as_matrix(obj, what: str = "matrix") -> np.ndarray:
    """Validate and convert to a 2-D float64 array with finite entries."""
    a = np.asarray(obj, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{what} must be 2-D and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise MatrixFormatError(f"{what} contains non-finite entries")
    return np.ascontiguousarray(a)


def qr_of_transpose(a: np.ndarray):
    """Thin QR of A^T with a rank check on the triangular diagonal.

    Returns (Q, R) with A^T = Q R, Q of shape (n, m). Raises RankError
    naming the first diagonal of R below rank_tol = 1e-10 * max |R_ii|.
    """
    q, r = np.linalg.qr(a.T, mode="reduced")
    diag = np.abs(np.diagonal(r))
    rank_tol = 1e-10 * (diag.max() if diag.size else 0.0)
    small = np.flatnonzero(diag <= rank_tol)
    if diag.size == 0 or diag.max() == 0.0 or small.size:
        index = int(small[0]) if small.size else 0
        raise RankError(
            f"matrix is numerically rank deficient: |R[{index},{index}]| = "
            f"{diag[index] if diag.size else 0.0:.3e} <= rank_tol = {rank_tol:.3e}",
            index=index,
        )
    return q, r


def mpp(a) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a full-row-rank wide matrix.

    Computed as Q R^{-T} from the thin QR of A^T, which equals
    A^T (A A^T)^{-1} without ever forming the Gram matrix.
    """
    a = as_matrix(a, "A")
    m, n = a.shape
    if m > n:
        raise DimensionError(f"expected a wide matrix (m <= n), got {m}x{n}")
    q, r = qr_of_transpose(a)
    rinv_t = scipy.linalg.solve_triangular(r, np.eye(m), trans="T", lower=False)
    return np.ascontiguousarray(q @ rinv_t)


def frob_norm_sq(m) -> float:
    """Sum of squared entries."""
    a = np.asarray(m, dtype=float)
    return float(np.sum(a * a))


def write_matrix_csv(path, a) -> None:
    """Write a matrix as comma-separated rows, 17 significant digits, no header."""
    a = as_matrix(a, "matrix")
    np.savetxt(path, a, fmt="%.17g", delimiter=",")


def read_matrix_csv(path) -> np.ndarray:
    """Read a matrix written by write_matrix_csv (or any plain numeric CSV)."""
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise MatrixFormatError(
                    f"{path}: row {lineno} has {len(fields)} fields, expected {width}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise MatrixFormatError(f"{path}: row {lineno}: {exc}") from exc
    if not rows:
        raise MatrixFormatError(f"{path}: no rows")
    a = np.array(rows)
    if not np.all(np.isfinite(a)):
        raise MatrixFormatError(f"{path}: contains non-finite entries")
    return a
