"""Monte Carlo harness: norm-concentration runs across (n, delta, p,
ensemble), the random-submatrix baseline, and a subsampled discrete
Radon (tomography) model.

Every run is a pure function of its arguments: trial t draws its matrix
from stream_id = t of the given seed, so records can be reproduced
individually. The wall_ms field is the one measured (non-replayable)
quantity; everything else replays byte for byte.
"""

import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import ENSEMBLE_KINDS, RngStream, frob_norm_sq, mpp, sample_matrix
from .errors import ConvergenceError, DomainError, SingularityError
from .ginv import SolverOptions, column_sparsity, ginv0_random_submatrix, lp_min_ginv
from .theory import alpha_star_limit

RECORD_FIELDS = ("seed", "trial", "n", "m", "delta_nominal", "p", "ensemble",
                 "normalized_frob", "nnz_total", "wall_ms")

_RESAMPLE_RETRIES = 50
# iteration the solver's soft threshold must resolve entries of size ~1/m,
# so the penalty is scale-matched instead of the order-one default
_EXPERIMENT_RHO = 50.0


@dataclass(frozen=True)
class ExperimentRecord:
    """One trial of one concentration run."""

    seed: int
    trial: int
    n: int
    m: int
    delta_nominal: float
    p: float
    ensemble: str
    normalized_frob: float  # (n/m) * ||X||_F^2
    nnz_total: int
    wall_ms: float

    def __post_init__(self):
        if self.m != round(self.delta_nominal * self.n) + 1:
            raise DomainError(
                f"m = {self.m} does not match round(delta*n)+1 for "
                f"delta = {self.delta_nominal}, n = {self.n}")
        if not self.normalized_frob > 0.0:
            raise DomainError("normalized_frob must be positive")

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in RECORD_FIELDS}


def _m_from_delta(n: int, delta: float) -> int:
    m = round(delta * n) + 1
    if not 1 < m <= n:
        raise DomainError(
            f"delta = {delta} gives m = {m} outside (1, {n}] for n = {n}")
    return m


def _solver_options(p: float, opts: Optional[SolverOptions]) -> SolverOptions:
    if opts is not None:
        return replace(opts, p=float(p))
    return SolverOptions(p=float(p), rho=_EXPERIMENT_RHO)


def _summary(values: np.ndarray) -> dict:
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return {
        "trials": int(values.size),
        "mean": float(np.mean(values)),
        "sd": sd,
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "min": float(values.min()),
        "max": float(values.max()),
    }


def run_concentration(n: int, delta: float, p: float, trials: int,
                      ensemble: str, seed: int,
                      opts: Optional[SolverOptions] = None,
                      ) -> Tuple[List[ExperimentRecord], dict]:
    """One concentration run: `trials` draws of an m x n matrix from the
    ensemble (m = round(delta*n)+1, stream_id = trial), each inverted at
    the given p. Returns the per-trial records and a summary of the
    normalized Frobenius values (mean, sd, quartiles)."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    if ensemble not in ENSEMBLE_KINDS:
        raise DomainError(f"ensemble must be one of {ENSEMBLE_KINDS}, got {ensemble!r}")
    m = _m_from_delta(n, delta)
    solver = _solver_options(p, opts)
    records = []
    for t in range(trials):
        a = sample_matrix(ensemble, m, n, RngStream(seed, t))
        start = time.perf_counter()
        if p == 2.0 and opts is None:
            # closed route: the p = 2 inverse is the pseudoinverse
            x = mpp(a)
            nf = (n / m) * frob_norm_sq(x)
            nnz = sum(column_sparsity(x, solver.sparsity_threshold))
        else:
            try:
                res = lp_min_ginv(a, solver)
            except ConvergenceError as err:
                raise ConvergenceError(
                    f"trial {t}: {err}",
                    primal_residual=err.primal_residual,
                    dual_residual=err.dual_residual,
                    columns_unconverged=err.columns_unconverged) from err
            nf = res.normalized_frob
            nnz = sum(res.per_column_nnz)
        wall = (time.perf_counter() - start) * 1e3
        records.append(ExperimentRecord(
            seed=seed, trial=t, n=n, m=m, delta_nominal=float(delta),
            p=float(p), ensemble=ensemble, normalized_frob=float(nf),
            nnz_total=int(nnz), wall_ms=float(wall)))
    values = np.array([r.normalized_frob for r in records])
    return records, _summary(values)


def baseline_comparison(m: int, n: int, experiments: int, trials: int,
                        seed: int) -> List[dict]:
    """Random-submatrix inverses against the sparse inverse.

    For each experiment: one Gaussian m x n matrix, `trials` draws of the
    invert-m-random-columns baseline (normalized Frobenius quartiles) and
    the sparse-inverse value of the same matrix.
    """
    if m >= n:
        raise DomainError(f"need m < n, got m = {m}, n = {n}")
    if experiments < 1 or trials < 1:
        raise DomainError("experiments and trials must be >= 1")
    scale = n / m
    rows = []
    for e in range(experiments):
        a = sample_matrix("gaussian", m, n, RngStream(seed, e))
        spinv = lp_min_ginv(a, _solver_options(1.0, None)).normalized_frob
        draws = np.array([
            scale * frob_norm_sq(
                ginv0_random_submatrix(a, RngStream(seed, 1_000_000 * (e + 1) + t)))
            for t in range(trials)
        ])
        q1, med, q3 = np.percentile(draws, [25.0, 50.0, 75.0])
        rows.append({
            "experiment": e,
            "m": m,
            "n": n,
            "trials": trials,
            "baseline_min": float(draws.min()),
            "baseline_q1": float(q1),
            "baseline_median": float(med),
            "baseline_q3": float(q3),
            "baseline_max": float(draws.max()),
            "spinv_normalized_frob": float(spinv),
        })
    return rows


# ---------------------------------------------------------------- radon model

def radon_ray(panel: int, angle: float, offset: float) -> np.ndarray:
    """Exact pixel chord lengths of one parallel-beam ray.

    The panel is a panel x panel grid of unit pixels centred at the
    origin; the ray is the line {(x, y) : x cos(angle) + y sin(angle) =
    offset}. Entry iy * panel + ix is the intersection length with pixel
    (ix, iy), indexed from the lower-left corner.
    """
    if panel < 2:
        raise DomainError(f"panel must be >= 2, got {panel}")
    half = panel / 2.0
    zeros = np.zeros(panel * panel)
    c, s = math.cos(angle), math.sin(angle)
    px, py = offset * c, offset * s
    dx, dy = -s, c
    t0, t1 = -np.inf, np.inf
    for pos, d in ((px, dx), (py, dy)):
        if abs(d) < 1e-12:
            if not -half <= pos <= half:
                return zeros
        else:
            ta, tb = (-half - pos) / d, (half - pos) / d
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
    if t1 - t0 <= 1e-12:
        return zeros
    edges = np.arange(panel + 1) - half
    cuts = [np.array([t0, t1])]
    if abs(dx) >= 1e-12:
        tx = (edges - px) / dx
        cuts.append(tx[(tx > t0) & (tx < t1)])
    if abs(dy) >= 1e-12:
        ty = (edges - py) / dy
        cuts.append(ty[(ty > t0) & (ty < t1)])
    ts = np.unique(np.concatenate(cuts))
    row = zeros
    for ta, tb in zip(ts[:-1], ts[1:]):
        if tb - ta <= 1e-12:
            continue
        tm = 0.5 * (ta + tb)  # midpoint decides the pixel
        ix = int(math.floor(px + tm * dx + half))
        iy = int(math.floor(py + tm * dy + half))
        if 0 <= ix < panel and 0 <= iy < panel:
            row[iy * panel + ix] += tb - ta
    return row


@lru_cache(maxsize=8)
def _radon_dictionary(panel: int, factor: int) -> np.ndarray:
    """All rays that hit the panel, for factor*panel equispaced angles in
    [0, pi) and factor*panel offsets spanning the panel diagonal. Cached;
    callers must not mutate the result."""
    count = factor * panel
    half_diag = panel * math.sqrt(2.0) / 2.0
    offsets = np.linspace(-half_diag, half_diag, count)
    rows = []
    for k in range(count):
        angle = math.pi * k / count
        for off in offsets:
            row = radon_ray(panel, angle, float(off))
            if row.max() > 0.0:
                rows.append(row)
    return np.array(rows)


@dataclass(frozen=True)
class RadonSpec:
    """Geometry of one subsampled tomographic system.

    The forward matrix is tall: n_rows = round(panel^2 / delta) rays over
    n_cols = panel^2 pixels. The ray dictionary starts at 2*panel angles
    and offsets and both counts grow by the same integer factor until the
    dictionary can cover n_rows without replacement.
    """

    delta: float
    panel: int = 15
    n_cols: int = field(init=False)
    n_rows: int = field(init=False)
    angles: int = field(init=False)
    offsets: int = field(init=False)

    def __post_init__(self):
        if not isinstance(self.panel, int) or self.panel < 2:
            raise DomainError(f"panel must be an integer >= 2, got {self.panel}")
        if not 0.0 < self.delta <= 1.0:
            raise DomainError(f"delta must lie in (0, 1], got {self.delta}")
        n_cols = self.panel * self.panel
        n_rows = round(n_cols / self.delta)
        factor = 2
        while _radon_dictionary(self.panel, factor).shape[0] < n_rows:
            factor += 1
            if factor > 64:
                raise DomainError(
                    f"ray dictionary cannot reach {n_rows} rows at panel = {self.panel}")
        object.__setattr__(self, "n_cols", n_cols)
        object.__setattr__(self, "n_rows", n_rows)
        object.__setattr__(self, "angles", factor * self.panel)
        object.__setattr__(self, "offsets", factor * self.panel)

    def as_dict(self) -> dict:
        return {
            "panel": self.panel,
            "n_cols": self.n_cols,
            "delta": self.delta,
            "n_rows": self.n_rows,
            "angles": self.angles,
            "offsets": self.offsets,
        }


def radon_matrix(spec: RadonSpec, rng: RngStream) -> np.ndarray:
    """One tall tomographic matrix: n_rows rays subsampled uniformly
    without replacement from the dictionary, resampled (up to a retry
    cap) until the columns are linearly independent."""
    dictionary = _radon_dictionary(spec.panel, spec.angles // spec.panel)
    cursor = rng.open()
    for _ in range(_RESAMPLE_RETRIES):
        sel = cursor.index_subset(dictionary.shape[0], spec.n_rows)
        tall = dictionary[sel]
        if np.linalg.matrix_rank(tall) == spec.n_cols:
            return tall
    raise SingularityError(
        f"no full-column-rank {spec.n_rows}x{spec.n_cols} subsample in "
        f"{_RESAMPLE_RETRIES} draws")


def tomo_ratio_experiment(deltas: Sequence[float], trials: int, seed: int,
                          opts: Optional[SolverOptions] = None) -> List[dict]:
    """Mean ||spinv||_F^2 / ||MPP||_F^2 over subsampled tomographic
    systems per delta, alongside the Gaussian limiting ratio. The tall
    system is transposed into the wide orientation before inversion."""
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    rows = []
    for d_idx, delta in enumerate(deltas):
        if not 0.0 < delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {delta}")
        spec = RadonSpec(delta=float(delta))
        solver = _solver_options(1.0, opts)
        ratios = []
        for t in range(trials):
            tall = radon_matrix(spec, RngStream(seed, 10_000 * (d_idx + 1) + t))
            a = np.ascontiguousarray(tall.T)
            sparse = lp_min_ginv(a, solver)
            ratios.append(frob_norm_sq(sparse.X) / frob_norm_sq(mpp(a)))
        gauss = (alpha_star_limit(1, float(delta)).alpha_star_sq
                 / alpha_star_limit(2, float(delta)).alpha_star_sq)
        rows.append({
            "delta": float(delta),
            "panel": spec.panel,
            "n_rows": spec.n_rows,
            "n_cols": spec.n_cols,
            "angles": spec.angles,
            "offsets": spec.offsets,
            "trials": trials,
            "tomo_ratio": float(np.mean(ratios)),
            "gauss_ratio": float(gauss),
        })
    return rows


def ensemble_sweep(n: int, deltas: Sequence[float], trials: int, seed: int,
                   ps: Sequence[float] = (1.0, 2.0)) -> List[dict]:
    """Mean normalized Frobenius norm per (ensemble, delta, p), with the
    limiting Gaussian prediction and a flag on p = 1 cells deviating from
    it by more than 10% (expected for sign ensembles)."""
    rows = []
    for kind in ENSEMBLE_KINDS:
        for delta in deltas:
            for p in ps:
                _, summary = run_concentration(n, delta, p, trials, kind, seed)
                theory = None
                if p in (1.0, 2.0):
                    theory = alpha_star_limit(p, float(delta)).alpha_star_sq
                deviation = None
                if theory is not None:
                    deviation = abs(summary["mean"] / theory - 1.0)
                rows.append({
                    "ensemble": kind,
                    "delta": float(delta),
                    "p": float(p),
                    "n": n,
                    "m": _m_from_delta(n, delta),
                    "trials": trials,
                    "mean_normalized_frob": summary["mean"],
                    "sd": summary["sd"],
                    "theory_limit": theory,
                    "deviation": deviation,
                    "flagged": bool(p == 1.0 and deviation is not None
                                    and deviation > 0.10),
                })
    return rows


# ---------------------------------------------------------------- file output

def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return "%.17g" % value
    if value is None:
        return ""
    return str(value)


def write_records_csv(path, records: Sequence[ExperimentRecord]) -> None:
    """One record per line under a header naming all fields."""
    lines = [",".join(RECORD_FIELDS)]
    for rec in records:
        d = rec.as_dict()
        lines.append(",".join(_cell(d[name]) for name in RECORD_FIELDS))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_table_csv(path, rows: Sequence[dict],
                    fields: Optional[Sequence[str]] = None) -> None:
    """Write a list of uniform dicts as CSV; column order follows the
    first row unless `fields` pins it."""
    if fields is None:
        if not rows:
            raise DomainError("cannot infer a header from an empty table")
        fields = list(rows[0].keys())
    lines = [",".join(fields)]
    for row in rows:
        lines.append(",".join(_cell(row[name]) for name in fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
