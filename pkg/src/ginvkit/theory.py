"""Deterministic theory layer: special functions, distance functionals,
the scalar saddle equation, and the concentration predictions.

The central objects, for a wide m-by-n problem with aspect ratio delta:

  D_p(t; n) = (1/n) * (E dist(h, {u : ||u||_q <= t}))^2,  h ~ N(0, I_n),

with q the dual exponent of p, and the threshold t* solving

  D(t) - (t/2) D'(t) = delta.

The predicted concentration point of (n/m)*||ginv_p(A)||_F^2 is then

  alpha*^2 = D(t*) / (delta * (delta - D(t*))).

Limiting closed forms exist for p = 1 (via theta and erfc) and p = 2
(via chi(n) moments); finite-n values come from quadrature (p = 2) or
Monte Carlo with common random numbers (other p).
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.integrate
import scipy.optimize
import scipy.special

from .core import RngStream
from .errors import DomainError, PrecisionError

_SQRT_2_PI = math.sqrt(2.0 / math.pi)
_CHUNK_ELEMS = 1 << 22  # ~32 MB of float64 per work array


# ---------------------------------------------------------------- special functions

def erfc(x: float) -> float:
    """Complementary error function."""
    return math.erfc(x)


def erfc_inv(y: float) -> float:
    """Inverse of erfc on (0, 2)."""
    if not (0.0 < y < 2.0):
        raise DomainError(f"erfc_inv needs 0 < y < 2, got {y}")
    return float(scipy.special.erfcinv(y))


class Theta(NamedTuple):
    value: float
    derivative: float


def theta(t: float) -> Theta:
    """E(|h| - t)_+^2 for scalar standard normal h, with its t-derivative.

    Closed form: (t^2+1) erfc(t/sqrt(2)) - sqrt(2/pi) e^{-t^2/2} t.
    Satisfies theta(t) - (t/2) theta'(t) = erfc(t/sqrt(2)).
    """
    if t < 0.0:
        raise DomainError(f"theta needs t >= 0, got {t}")
    ec = math.erfc(t / math.sqrt(2.0))
    gauss = _SQRT_2_PI * math.exp(-0.5 * t * t)
    return Theta(
        value=(t * t + 1.0) * ec - gauss * t,
        derivative=2.0 * t * ec - 2.0 * gauss,
    )


# ---------------------------------------------------------------- predictions

@dataclass(frozen=True)
class TheoryPrediction:
    """Where (n/m)*||ginv_p(A)||_F^2 is predicted to concentrate.

    In the limiting regime n is None and, for p=2 only, t_star is the
    sqrt(n)-normalized threshold (the finite-n threshold grows like
    sqrt(n); p=1 keeps an O(1) threshold).
    """

    p: float
    delta: float
    n: Optional[int]
    regime: str  # limiting | finite_mc | finite_quadrature
    t_star: float
    D_at_tstar: float
    alpha_star: float
    alpha_star_sq: float

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "delta": self.delta,
            "n": self.n,
            "regime": self.regime,
            "t_star": self.t_star,
            "D_at_tstar": self.D_at_tstar,
            "alpha_star": self.alpha_star,
            "alpha_star_sq": self.alpha_star_sq,
        }


def _prediction(p, delta, n, regime, t_star, d_at) -> TheoryPrediction:
    # alpha* is defined only while D(t*) < delta
    if not (0.0 < d_at < delta):
        raise DomainError(
            f"D(t*) = {d_at:.6g} must lie in (0, delta) with delta = {delta:.6g}"
        )
    a2 = d_at / (delta * (delta - d_at))
    return TheoryPrediction(
        p=float(p), delta=float(delta), n=n, regime=regime,
        t_star=float(t_star), D_at_tstar=float(d_at),
        alpha_star=math.sqrt(a2), alpha_star_sq=a2,
    )


def _check_delta(delta):
    if not (0.0 < delta < 1.0):
        raise DomainError(f"delta must lie in (0, 1), got {delta}")


def t_star_limit(p, delta: float) -> float:
    """Limiting saddle threshold; p=2 is returned in units of sqrt(n)."""
    _check_delta(delta)
    if p == 1:
        return math.sqrt(2.0) * erfc_inv(delta)
    if p == 2:
        return 1.0 - delta
    raise DomainError(f"closed-form limit exists for p in {{1, 2}}, got p = {p}")


def alpha_star_limit(p, delta: float) -> TheoryPrediction:
    """Limiting concentration prediction from the closed forms."""
    _check_delta(delta)
    t = t_star_limit(p, delta)
    if p == 1:
        d_at = theta(t).value
    else:
        d_at = delta * delta
    return _prediction(p, delta, None, "limiting", t, d_at)


# ---------------------------------------------------------------- lq-ball projection

def _project_rows_lq(a: np.ndarray, q: float, t: float) -> np.ndarray:
    """Rowwise Euclidean projection of nonnegative a onto {||w||_q <= t}, q in (2, inf).

    Exterior rows solve the KKT system w + mu*q*w^{q-1} = a coordinatewise
    with the scalar dual multiplier mu >= 0 chosen so that ||w||_q = t.
    mu is found by safeguarded Newton inside an analytic bracket; the
    coordinate solve is Newton on a convex increasing residual.
    """
    if t == 0.0:
        return np.zeros_like(a)
    aq = a**q
    norm_q = np.sum(aq, axis=1) ** (1.0 / q)
    exterior = norm_q > t
    out = a.copy()
    if not np.any(exterior):
        return out
    ae = a[exterior]
    rows, n = ae.shape
    tq = t**q

    # analytic upper bound: w_i <= (a_i/(mu q))^{1/(q-1)} makes ||w||_q^q <= t^q
    qp = q / (q - 1.0)
    hi = (np.sum(ae**qp, axis=1) ** ((q - 1.0) / q)) / (q * t ** (q - 1.0))
    hi = hi * (1.0 + 1e-9) + 1e-300
    lo = np.zeros(rows)
    # equal-coordinate heuristic seed, clipped into the bracket
    seed = (norm_q[exterior] - t) * n ** ((q - 2.0) / q) / (q * t ** (q - 1.0))
    mu = np.clip(seed, hi * 1e-6, hi)

    w = ae.copy()
    inner_tol = 1e-13 * (1.0 + float(ae.max()))
    for _ in range(100):
        # coordinate solve at the current mu; any w below its root restarts at a
        for sweep in range(50):
            e = w ** (q - 2.0)
            wq1 = e * w
            phi = w + (mu[:, None] * q) * wq1 - ae
            if sweep == 0:
                w = np.where(phi < 0.0, ae, w)
                phi = np.where(phi < 0.0, (mu[:, None] * q) * ae ** (q - 1.0), phi)
                e = w ** (q - 2.0)
                wq1 = e * w
            if np.max(np.abs(phi)) <= inner_tol:
                break
            dphi = 1.0 + (mu[:, None] * q * (q - 1.0)) * e
            w = np.maximum(w - phi / dphi, 0.0)

        s = np.sum(wq1 * w, axis=1)
        f = s - tq
        if np.max(np.abs(f)) <= 1e-12 * tq:
            break
        lo = np.where(f > 0.0, mu, lo)
        hi = np.where(f < 0.0, mu, hi)
        dphi = 1.0 + (mu[:, None] * q * (q - 1.0)) * e
        df = -np.sum(q * q * wq1 * wq1 / dphi, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_newton = mu - f / df
        ok = np.isfinite(mu_newton) & (mu_newton > lo) & (mu_newton < hi)
        mu = np.where(ok, mu_newton, 0.5 * (lo + hi))
        if np.max(hi - lo) <= 1e-15 * (1.0 + np.max(hi)):
            break
    else:
        raise PrecisionError("dual-multiplier iteration for the lq projection stalled")

    out[exterior] = w
    return out


def project_dual_ball(v, p: float, t: float) -> np.ndarray:
    """Euclidean projection of v onto the ball {u : ||u||_q <= t}, q dual to p."""
    if not (1.0 <= p <= 2.0):
        raise DomainError(f"p must lie in [1, 2], got {p}")
    if t < 0.0:
        raise DomainError(f"ball radius must be >= 0, got {t}")
    v = np.asarray(v, dtype=float)
    if p == 1.0:  # q = inf: coordinate clamp
        return np.clip(v, -t, t)
    if p == 2.0:  # q = 2: radial scaling
        nrm = float(np.linalg.norm(v))
        if nrm <= t:
            return v.copy()
        return v * (t / nrm) if nrm > 0.0 else v.copy()
    q = p / (p - 1.0)
    w = _project_rows_lq(np.abs(v)[None, :], q, t)[0]
    return np.sign(v) * w


def dist_dual_ball(v, p: float, t: float) -> float:
    """Euclidean distance of v to the dual-norm ball of radius t."""
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(v - project_dual_ball(v, p, t)))


def _dist_rows(h: np.ndarray, p: float, t: float) -> np.ndarray:
    """Distances of each row of h to the dual ball (closed forms where known)."""
    if p == 1.0:
        excess = np.maximum(np.abs(h) - t, 0.0)
        return np.sqrt(np.sum(excess * excess, axis=1))
    if p == 2.0:
        return np.maximum(np.linalg.norm(h, axis=1) - t, 0.0)
    a = np.abs(h)
    w = _project_rows_lq(a, p / (p - 1.0), t)
    diff = a - w
    return np.sqrt(np.sum(diff * diff, axis=1))


def _dist_moments(p, ts, n, samples, rng):
    """One pass over `samples` N(0, I_n) draws; per threshold in ts returns
    (mean distance, sample sd of distance). Common random numbers: every
    threshold sees the identical draws."""
    ts = list(ts)
    sums = np.zeros(len(ts))
    sumsq = np.zeros(len(ts))
    cur = rng.open()
    left = samples
    rows_per = max(1, _CHUNK_ELEMS // max(n, 1))
    while left > 0:
        k = min(left, rows_per)
        h = cur.normals(k * n).reshape(k, n)
        for j, t in enumerate(ts):
            d = _dist_rows(h, p, t)
            sums[j] += d.sum()
            sumsq[j] += float(d @ d)
        left -= k
    means = sums / samples
    var = np.maximum(sumsq - samples * means * means, 0.0) / max(samples - 1, 1)
    return means, np.sqrt(var)


@dataclass(frozen=True)
class DpEstimate:
    value: float
    stderr: float
    samples: int
    t: float
    n: int
    p: float


def estimate_Dp(p: float, t: float, n: int, samples: int, rng: RngStream) -> DpEstimate:
    """Monte Carlo D_p(t; n) = (1/n)(E dist)^2 with a delta-method stderr."""
    if not (1.0 <= p <= 2.0):
        raise DomainError(f"p must lie in [1, 2], got {p}")
    if t < 0.0:
        raise DomainError(f"t must be >= 0, got {t}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if samples < 2:
        raise DomainError(f"need at least 2 samples, got {samples}")
    means, sds = _dist_moments(p, [t], n, samples, rng)
    dbar = float(means[0])
    se_dbar = float(sds[0]) / math.sqrt(samples)
    return DpEstimate(
        value=dbar * dbar / n,
        stderr=2.0 * dbar * se_dbar / n,
        samples=samples, t=float(t), n=int(n), p=float(p),
    )


# ---------------------------------------------------------------- p=2 quadrature

class D2Value(NamedTuple):
    value: float
    derivative: float


def D2_quadrature(t: float, n: int) -> D2Value:
    """D_2(t; n) and its t-derivative, exactly (to quadrature accuracy).

    d(t) = (1/sqrt(n)) E(||h|| - t)_+ is integrated against the chi(n)
    density (log-gamma stabilized, so n up to 10^4 cannot overflow), and
    d'(t) = -(1/sqrt(n)) P(||h|| > t) comes from the chi tail probability.
    Then D = d^2 and D' = 2 d d'.
    """
    if t < 0.0:
        raise DomainError(f"t must be >= 0, got {t}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    logc = (1.0 - 0.5 * n) * math.log(2.0) - math.lgamma(0.5 * n)

    def integrand(r):
        if r <= 0.0 or r <= t:
            return 0.0
        return (r - t) * math.exp(logc + (n - 1.0) * math.log(r) - 0.5 * r * r)

    mode = math.sqrt(n - 1.0) if n > 1 else 0.5
    upper = max(t, mode) + 14.0
    pts = [x for x in (mode,) if t < x < upper]
    raw, _ = scipy.integrate.quad(
        integrand, t, upper, points=pts or None,
        epsabs=1e-13, epsrel=1e-12, limit=300,
    )
    rt = math.sqrt(n)
    d = raw / rt
    dprime = -float(scipy.special.gammaincc(0.5 * n, 0.5 * t * t)) / rt
    return D2Value(value=d * d, derivative=2.0 * d * dprime)


# ---------------------------------------------------------------- saddle equation

@dataclass(frozen=True)
class SaddleOptions:
    """Controls for the finite-n saddle solve.

    samples/seed/stream_id matter only for the Monte Carlo regimes;
    xtol_rel (relative to the natural threshold scale n^{1-1/p}) defaults
    to 1e-10 for quadrature and 1e-4 for Monte Carlo.
    """

    samples: int = 20000
    seed: int = 0
    stream_id: int = 0
    xtol_rel: Optional[float] = None
    max_expansions: int = 60

    def __post_init__(self):
        if self.samples < 2:
            raise DomainError(f"samples must be >= 2, got {self.samples}")
        if self.xtol_rel is not None and self.xtol_rel <= 0.0:
            raise DomainError("xtol_rel must be positive")


def solve_t_star_finite(p: float, delta: float, n: int, opts: SaddleOptions = None
                        ) -> TheoryPrediction:
    """Solve D(t) - (t/2) D'(t) = delta for the finite-n threshold t*.

    The left side is strictly decreasing, so the root is bracketed by
    geometric expansion and polished with Brent. p=2 evaluates D by
    quadrature; all other p use Monte Carlo with common random numbers
    (the same draws at t-h, t, t+h give the finite-difference D').
    """
    if not (1.0 <= p <= 2.0):
        raise DomainError(f"p must lie in [1, 2], got {p}")
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    if not (0.0 < delta < n / (n + 1.0)):
        raise DomainError(f"delta must lie in (0, n/(n+1)) = (0, {n/(n+1.0):.6g}), got {delta}")
    opts = opts or SaddleOptions()

    if p == 2.0:
        scale = math.sqrt(n)

        def g(t):
            val, der = D2_quadrature(t, n)
            return val - 0.5 * t * der

        regime = "finite_quadrature"
        xtol = (opts.xtol_rel or 1e-10) * scale
    else:
        scale = n ** (1.0 - 1.0 / p)
        rng = RngStream(opts.seed, opts.stream_id)

        def bundle(t):
            h = 1e-3 * t
            means, sds = _dist_moments(p, [t - h, t, t + h], n, opts.samples, rng)
            d_lo, d_c, d_hi = means * means / n
            deriv = (d_hi - d_lo) / (2.0 * h)
            se = 2.0 * means[1] * (sds[1] / math.sqrt(opts.samples)) / n
            return float(d_c), float(deriv), float(se)

        def g(t):
            d, der, _ = bundle(t)
            return d - 0.5 * t * der

        regime = "finite_mc"
        xtol = (opts.xtol_rel or 1e-4) * scale

    lo = (1e-9 if p == 2.0 else 1e-6) * scale
    if g(lo) <= delta:
        raise DomainError(
            f"bracketing failure: the saddle function at t = {lo:.3g} is already <= delta"
        )
    hi = scale
    for _ in range(opts.max_expansions):
        if g(hi) < delta:
            break
        hi *= 1.6
    else:
        raise DomainError("bracketing failure: no upper bracket for the saddle root")

    t_star = float(scipy.optimize.brentq(lambda t: g(t) - delta, lo, hi, xtol=xtol))

    if p == 2.0:
        d_at = D2_quadrature(t_star, n).value
        if abs(g(t_star) - delta) > 1e-6:
            raise PrecisionError("saddle residual above 1e-6 after root polish")
    else:
        d_at, _, se = bundle(t_star)
        if d_at >= delta or 3.0 * se >= 0.5 * (delta - d_at):
            raise PrecisionError(
                f"Monte Carlo stderr {se:.2e} cannot resolve delta - D(t*) = "
                f"{delta - d_at:.2e}; increase samples (currently {opts.samples})"
            )
    return _prediction(p, delta, int(n), regime, t_star, d_at)


# ---------------------------------------------------------------- kappa saddle

def _dp_value(p, t, n, dp_source, samples, rng):
    if dp_source == "quadrature":
        if p != 2.0:
            raise DomainError("quadrature D is available only for p = 2")
        return D2_quadrature(t, n).value
    if dp_source == "mc":
        return estimate_Dp(p, t, n, samples, rng or RngStream(0, 0)).value
    raise DomainError(f"dp_source must be 'quadrature' or 'mc', got {dp_source!r}")


def kappa(alpha: float, beta: float, p: float, n: int, delta: float, lam: float,
          dp_source: str = "quadrature", samples: int = 20000,
          rng: RngStream = None) -> float:
    """The scalar saddle function beta*sqrt(delta*alpha^2+1) - alpha*beta*sqrt(D_p(lam/beta)).

    Its argmin over alpha of the max over beta sits at (alpha*, lam/t*).
    """
    if lam <= 0.0:
        raise DomainError(f"lam must be positive, got {lam}")
    if not (0.0 <= beta <= 1.0):
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    if alpha < 0.0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    _check_delta(delta)
    if beta == 0.0:
        return 0.0
    d = _dp_value(p, lam / beta, n, dp_source, samples, rng)
    return beta * math.sqrt(delta * alpha * alpha + 1.0) - alpha * beta * math.sqrt(d)


class SaddleGrid(NamedTuple):
    alpha_hat: float
    beta_hat: float
    alpha_cell: float
    beta_cell: float
    value: float


def kappa_saddle_grid(p: float, n: int, delta: float, lam: float, alpha_star: float,
                      n_alpha: int = 400, n_beta: int = 200,
                      dp_source: str = "quadrature", samples: int = 20000,
                      rng: RngStream = None) -> SaddleGrid:
    """Grid saddle of kappa: the min-max alpha and the max-min beta.

    alpha runs over n_alpha uniform points on [0, 2*alpha_star], beta over
    the grid {1/n_beta, ..., 1}. alpha_hat minimizes the upper envelope
    max_beta kappa and beta_hat maximizes the lower envelope min_alpha
    kappa; each envelope is strictly curved at the saddle, so both
    coordinates are stable to one cell. (The argmax along the single row
    alpha = alpha_hat is not: kappa(alpha*, .) is flat in beta to near
    machine precision over a wide range.) Resolution is reported as the
    cell sizes.
    """
    if lam <= 0.0:
        raise DomainError(f"lam must be positive, got {lam}")
    _check_delta(delta)
    alphas = np.linspace(0.0, 2.0 * alpha_star, n_alpha)
    betas = np.arange(1, n_beta + 1) / n_beta
    sqrt_d = np.array([
        math.sqrt(_dp_value(p, lam / b, n, dp_source, samples, rng)) for b in betas
    ])
    gain = np.sqrt(delta * alphas**2 + 1.0)[:, None] - alphas[:, None] * sqrt_d[None, :]
    k = gain * betas[None, :]
    i_hat = int(np.argmin(k.max(axis=1)))
    j_hat = int(np.argmax(k.min(axis=0)))
    return SaddleGrid(
        alpha_hat=float(alphas[i_hat]),
        beta_hat=float(betas[j_hat]),
        alpha_cell=float(alphas[1] - alphas[0]),
        beta_cell=1.0 / n_beta,
        value=float(k[i_hat, j_hat]),
    )
