"""Tests for the lp-minimal generalized inverse solvers.

Cross-checks, none of which go through the ADMM code path:
  - hand-derived closed forms for 1x2 systems at p in {1, 1.5, 2},
  - the QR pseudoinverse for p = 2,
  - an l1 dual certificate (||A^T y||_inf <= 1, equality with the right
    sign on the support) proving global optimality of p = 1 solutions,
  - the gradient stationarity system p*sign(x)|x|^{p-1} = A^T y for
    smooth p in (1, 2),
  - the LP backend, which runs an external simplex/IPM engine.
"""

import json
import math

import numpy as np
import pytest

from ginvkit.core import RngStream, frob_norm_sq, mpp, sample_matrix
from ginvkit.errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    RankError,
    SingularityError,
)
from ginvkit.ginv import (
    SolverOptions,
    check_generalized_inverse,
    column_sparsity,
    ginv0_random_submatrix,
    lp_min_ginv,
)


def gaussian(seed, m, n, stream=0):
    return sample_matrix("gaussian", m, n, RngStream(seed, stream))


def l1_certificate(a, x):
    """Max dual infeasibility of the optimality certificate for
    min ||x||_1 s.t. Ax = b. Returns (support residual, |A^T y| excess)."""
    support = np.abs(x) > 1e-4 * np.abs(x).max()
    signs = np.sign(x[support])
    at_s = a[:, support].T
    y, *_ = np.linalg.lstsq(at_s, signs, rcond=None)
    fit = float(np.linalg.norm(at_s @ y - signs))
    excess = float(np.max(np.abs(a.T @ y)) - 1.0)
    return fit, excess


def smooth_p_stationarity(a, x, p):
    # gradient of sum |x|^p must lie in the row space of A
    g = p * np.sign(x) * np.abs(x) ** (p - 1.0)
    y, *_ = np.linalg.lstsq(a.T, g, rcond=None)
    return float(np.linalg.norm(a.T @ y - g))


# ---------------------------------------------------------------- options

def test_options_defaults():
    opts = SolverOptions(p=1.0)
    assert opts.eps_abs == 1e-8
    assert opts.eps_rel == 1e-6
    assert opts.max_iter == 50000
    assert opts.rho == 1.0
    assert opts.backend == "admm"
    assert opts.sparsity_threshold == 1e-6


@pytest.mark.parametrize("kwargs", [
    {"p": 0.5},
    {"p": 2.5},
    {"p": 1.0, "eps_abs": 0.0},
    {"p": 1.0, "eps_rel": -1e-9},
    {"p": 1.0, "max_iter": 0},
    {"p": 1.0, "rho": 0.0},
    {"p": 2.0, "backend": "lp"},
    {"p": 1.5, "backend": "lp"},
    {"p": 1.0, "backend": "simplex"},
    {"p": 1.0, "sparsity_threshold": -1e-9},
])
def test_options_rejections(kwargs):
    with pytest.raises(DomainError):
        SolverOptions(**kwargs)


# ---------------------------------------------------------------- tiny closed forms

def test_tiny_l1_puts_weight_on_large_coefficient():
    res = lp_min_ginv(np.array([[2.0, 1.0]]), SolverOptions(p=1.0))
    np.testing.assert_allclose(res.X, [[0.5], [0.0]], atol=1e-6)
    assert res.per_column_nnz == [1]


def test_tiny_l2_is_scaled_transpose():
    # pseudoinverse of a row vector a is a^T/||a||^2
    res = lp_min_ginv(np.array([[2.0, 1.0]]), SolverOptions(p=2.0))
    np.testing.assert_allclose(res.X, [[0.4], [0.2]], atol=1e-6)


def test_tiny_p15_weight_split():
    # min |x1|^1.5+|x2|^1.5 s.t. 2x1+x2=1: sqrt(x1)=2 sqrt(x2), so x=(4/9,1/9)
    res = lp_min_ginv(np.array([[2.0, 1.0]]), SolverOptions(p=1.5))
    np.testing.assert_allclose(res.X, [[4.0 / 9.0], [1.0 / 9.0]], atol=1e-5)


def test_diagonal_p2_inverse():
    a = np.array([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    res = lp_min_ginv(a, SolverOptions(p=2.0))
    np.testing.assert_allclose(res.X, [[0.5, 0.0], [0.0, 1.0], [0.0, 0.0]], atol=1e-6)


# ---------------------------------------------------------------- p=2 vs QR route

def test_p2_matches_qr_pseudoinverse():
    sizes = [(3, 7), (4, 9), (5, 12), (6, 14), (8, 18)]
    for k, (m, n) in enumerate([s for s in sizes for _ in range(4)]):
        a = gaussian(300 + k, m, n)
        res = lp_min_ginv(a, SolverOptions(p=2.0))
        ref = mpp(a)
        rel = np.linalg.norm(res.X - ref) / np.linalg.norm(ref)
        assert rel <= 1e-5, f"instance {k}: relative error {rel:.2e}"


# ---------------------------------------------------------------- result invariants

@pytest.mark.parametrize("p", [1.0, 1.3, 1.5, 1.7, 2.0])
def test_feasibility_and_bookkeeping(p):
    a = gaussian(41, 6, 15)
    opts = SolverOptions(p=p)
    res = lp_min_ginv(a, opts)
    m, n = a.shape
    assert res.p == p
    assert res.constraint_residual <= 10.0 * opts.eps_abs * math.sqrt(m)
    assert res.constraint_residual == pytest.approx(
        float(np.linalg.norm(a @ res.X - np.eye(m))), rel=1e-12)
    assert res.normalized_frob == pytest.approx((n / m) * frob_norm_sq(res.X), rel=1e-12)
    assert len(res.per_column_iterations) == m
    assert all(it >= 1 for it in res.per_column_iterations)
    assert res.per_column_nnz == column_sparsity(res.X, opts.sparsity_threshold)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_frobenius_never_beats_p2(p):
    a = gaussian(42, 6, 15)
    res = lp_min_ginv(a, SolverOptions(p=p))
    assert frob_norm_sq(res.X) >= frob_norm_sq(mpp(a)) - 1e-8


def test_frobenius_monotone_in_p():
    a = gaussian(43, 8, 20)
    f = {p: frob_norm_sq(lp_min_ginv(a, SolverOptions(p=p)).X) for p in (1.0, 1.5, 2.0)}
    assert f[1.0] >= f[1.5] - 1e-6
    assert f[1.5] >= f[2.0] - 1e-6


def test_l1_solutions_carry_dual_certificate():
    for seed in range(5):
        a = gaussian(500 + seed, 6, 15)
        res = lp_min_ginv(a, SolverOptions(p=1.0))
        for i in range(6):
            fit, excess = l1_certificate(a, res.X[:, i])
            assert fit <= 1e-6, f"seed {seed} col {i}: support fit {fit:.2e}"
            assert excess <= 1e-5, f"seed {seed} col {i}: dual excess {excess:.2e}"


def test_p15_solutions_are_stationary():
    # |x|^{p-1} amplifies coordinate error near zero, so certify at a
    # tighter tolerance than the defaults
    for seed in range(3):
        a = gaussian(520 + seed, 5, 12)
        res = lp_min_ginv(a, SolverOptions(p=1.5, eps_abs=1e-11, eps_rel=1e-9))
        for i in range(5):
            g_res = smooth_p_stationarity(a, res.X[:, i], 1.5)
            assert g_res <= 1e-5, f"seed {seed} col {i}: stationarity {g_res:.2e}"


def test_l1_columns_are_m_sparse():
    res = lp_min_ginv(gaussian(7, 3, 5), SolverOptions(p=1.0))
    assert res.per_column_nnz == [3, 3, 3]
    res = lp_min_ginv(gaussian(8, 8, 20), SolverOptions(p=1.0))
    assert all(1 <= k <= 8 for k in res.per_column_nnz)


def test_scale_equivariance():
    a = gaussian(44, 5, 12)
    c = 3.7
    for p in (1.0, 1.5, 2.0):
        x1 = lp_min_ginv(a, SolverOptions(p=p)).X
        x2 = lp_min_ginv(c * a, SolverOptions(p=p)).X
        err = np.linalg.norm(x2 - x1 / c)
        assert err <= 2e-4 * (1.0 + np.linalg.norm(x1) / c), f"p={p}: {err:.2e}"


def test_determinism():
    a = gaussian(45, 5, 12)
    r1 = lp_min_ginv(a, SolverOptions(p=1.5))
    r2 = lp_min_ginv(a, SolverOptions(p=1.5))
    assert np.array_equal(r1.X, r2.X)
    assert r1.per_column_iterations == r2.per_column_iterations


# ---------------------------------------------------------------- LP backend

def test_lp_backend_matches_admm_objective():
    for seed in range(10):
        a = gaussian(600 + seed, 5, 12)
        admm = lp_min_ginv(a, SolverOptions(p=1.0))
        lp = lp_min_ginv(a, SolverOptions(p=1.0, backend="lp"))
        for i in range(5):
            o1 = float(np.abs(admm.X[:, i]).sum())
            o2 = float(np.abs(lp.X[:, i]).sum())
            assert abs(o1 - o2) <= 1e-6 * max(o1, o2), f"seed {seed} col {i}"
        # the minimizer is a.s. unique, so the points agree too
        assert np.max(np.abs(admm.X - lp.X)) <= 5e-4


def test_lp_backend_tiny_example():
    res = lp_min_ginv(np.array([[2.0, 1.0]]), SolverOptions(p=1.0, backend="lp"))
    np.testing.assert_allclose(res.X, [[0.5], [0.0]], atol=1e-9)


# ---------------------------------------------------------------- failure modes

def test_max_iter_exhaustion_raises():
    # p strictly between 1 and 2 has no certificate shortcut, so a tiny
    # iteration cap must surface as a convergence failure
    a = gaussian(46, 8, 20)
    with pytest.raises(ConvergenceError) as exc:
        lp_min_ginv(a, SolverOptions(p=1.5, max_iter=5))
    err = exc.value
    assert err.primal_residual > 0.0
    assert err.dual_residual >= 0.0
    assert len(err.columns_unconverged) >= 1
    assert all(0 <= i < 8 for i in err.columns_unconverged)


def test_rank_deficient_input_raises():
    a = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    with pytest.raises(RankError):
        lp_min_ginv(a, SolverOptions(p=2.0))


def test_tall_input_rejected():
    with pytest.raises(DimensionError):
        lp_min_ginv(np.ones((3, 2)), SolverOptions(p=2.0))


# ---------------------------------------------------------------- random submatrix baseline

def _seed_with_first_selection(n, k, want):
    for seed in range(200):
        sel = RngStream(seed).open().index_subset(n, k)
        if set(sel) == want:
            return seed
    raise AssertionError("no seed hit the wanted selection")


def test_submatrix_inverse_identity_block():
    a = np.hstack([np.eye(2), np.array([[3.0, 1.0], [4.0, 1.0]])])
    seed = _seed_with_first_selection(4, 2, {0, 1})
    x = ginv0_random_submatrix(a, RngStream(seed))
    np.testing.assert_allclose(x, [[1, 0], [0, 1], [0, 0], [0, 0]], atol=1e-12)


def test_submatrix_inverse_properties():
    a = gaussian(47, 20, 30)
    for stream in range(50):
        x = ginv0_random_submatrix(a, RngStream(48, stream))
        assert x.shape == (30, 20)
        assert np.linalg.norm(a @ x - np.eye(20)) <= 1e-8
        assert int(np.sum(np.any(x != 0.0, axis=1))) == 20
    x1 = ginv0_random_submatrix(a, RngStream(48, 3))
    x2 = ginv0_random_submatrix(a, RngStream(48, 3))
    assert np.array_equal(x1, x2)


def test_submatrix_inverse_retries_then_succeeds():
    # columns 0 and 1 are parallel, so the draw {0,1} must be resampled
    a = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 1.0]])
    seed = _seed_with_first_selection(3, 2, {0, 1})
    x = ginv0_random_submatrix(a, RngStream(seed))
    assert np.linalg.norm(a @ x - np.eye(2)) <= 1e-8


def test_submatrix_inverse_all_singular_raises():
    a = np.ones((2, 4))
    with pytest.raises(SingularityError):
        ginv0_random_submatrix(a, RngStream(0))


def test_submatrix_inverse_median_dominates_sparse_inverse():
    a = gaussian(49, 20, 30)
    spinv_norm = lp_min_ginv(a, SolverOptions(p=1.0)).normalized_frob
    draws = [
        (30 / 20) * frob_norm_sq(ginv0_random_submatrix(a, RngStream(50, s)))
        for s in range(100)
    ]
    assert float(np.median(draws)) > spinv_norm


# ---------------------------------------------------------------- verification report

def test_check_accepts_pseudoinverse():
    a = gaussian(51, 4, 9)
    rep = check_generalized_inverse(a, mpp(a), 1e-8)
    assert rep.ok and rep.axa_ok and rep.ax_ok
    assert rep.axa_residual <= 1e-10
    assert rep.ax_residual <= 1e-10


def test_check_rejects_zero_matrix():
    a = gaussian(52, 4, 9)
    rep = check_generalized_inverse(a, np.zeros((9, 4)), 1e-8)
    assert not rep.ok and not rep.axa_ok
    assert rep.axa_residual == pytest.approx(np.linalg.norm(a), rel=1e-12)


def test_check_detects_single_entry_perturbation():
    a = gaussian(53, 4, 9)
    x = mpp(a)
    x[2, 1] += 1e-3
    rep = check_generalized_inverse(a, x, 1e-8)
    assert not rep.ok


def test_check_shape_mismatch():
    a = gaussian(54, 4, 9)
    with pytest.raises(DimensionError):
        check_generalized_inverse(a, np.zeros((8, 4)), 1e-8)


def test_check_report_serializes():
    a = gaussian(55, 3, 7)
    d = check_generalized_inverse(a, mpp(a), 1e-8).as_dict()
    assert d["ok"] is True
    json.dumps(d)


# ---------------------------------------------------------------- sparsity counter

def test_column_sparsity_identity():
    assert column_sparsity(np.eye(3), 1e-6) == [1, 1, 1]


def test_column_sparsity_zero_column():
    x = np.array([[1.0, 0.0], [2.0, 0.0]])
    assert column_sparsity(x, 1e-6) == [2, 0]


def test_column_sparsity_is_relative():
    x = np.array([[1.0, 1e-8], [1e-8, 1.0]])
    assert column_sparsity(x, 1e-6) == [1, 1]
    assert column_sparsity(x, 0.0) == [2, 2]


def test_column_sparsity_negative_threshold():
    with pytest.raises(DomainError):
        column_sparsity(np.eye(2), -1e-9)


# ---------------------------------------------------------------- serialization

def test_result_round_trips_through_json():
    a = gaussian(56, 3, 7)
    res = lp_min_ginv(a, SolverOptions(p=1.0))
    d = res.as_dict()
    assert set(d) == {"X", "p", "per_column_iterations", "constraint_residual",
                      "per_column_nnz", "normalized_frob"}
    blob = json.loads(json.dumps(d))
    np.testing.assert_allclose(np.array(blob["X"]), res.X)
