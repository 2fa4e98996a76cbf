import math

import numpy as np
import pytest

from conftest import brute_force_svm, random_separable
from lingrok.maxmargin import (KKT_CHECKS, DegenerateDualError, OneSidedSupportError,
                               SeparabilityError, SvmSolution, asymmetry_from_sums,
                               compute_w_tilde, kkt_report, solve_hard_margin, support_asymmetry)
from lingrok.types import Dataset


def test_two_point_closed_form():
    # +1 at (1, 0), -1 at (-1, 0): the minimizer of |w|^2 + b^2 is w = (1, 0), b = 0
    ds = Dataset(np.array([[1.0, 0.0], [-1.0, 0.0], [3.0, 1.0]]), np.array([1, -1, 1]))
    sol = solve_hard_margin(ds)
    assert np.allclose(sol.w_svm, [1, 0], atol=1e-12) and abs(sol.b_svm) < 1e-12
    assert sorted(sol.support_indices) == [0, 1]
    assert np.allclose(sol.duals, [0.5, 0.5], atol=1e-12)


def test_matches_brute_force_with_and_without_bias(rng):
    for k in range(30):
        n, d = int(rng.integers(2, 8)), int(rng.integers(1, 4))
        ds = random_separable(rng, n, d)
        for with_bias in (True, False):
            ref = brute_force_svm(ds.X, ds.y, with_bias)
            if ref is None:
                with pytest.raises(SeparabilityError):
                    solve_hard_margin(ds, with_bias=with_bias)
                continue
            sol = solve_hard_margin(ds, with_bias=with_bias)
            assert np.allclose(sol.omega, ref, atol=1e-7)


def test_kkt_residuals_small(rng):
    for _ in range(20):
        ds = random_separable(rng, 30, 3)
        sol = solve_hard_margin(ds)
        rep = kkt_report(sol, ds)
        assert all(rep[k] <= 1e-6 for k in KKT_CHECKS)


def test_not_separable_and_empty():
    ds = Dataset(np.array([[0.0], [0.0]]), np.array([1, -1]))
    with pytest.raises(SeparabilityError):
        solve_hard_margin(ds)
    with pytest.raises(SeparabilityError):
        solve_hard_margin(Dataset(np.empty((0, 2)), np.empty(0)))
    with pytest.raises(ValueError):
        solve_hard_margin(Dataset(np.zeros((3, 1)) + 1, np.ones(3)), cap=2)


def test_back_substitution_when_unique(rng):
    hits = 0
    for _ in range(40):
        ds = random_separable(rng, 6, 2)
        sol = solve_hard_margin(ds)
        if np.linalg.matrix_rank(sol.support_Z()) < len(sol.support_indices):
            continue
        try:
            sol = compute_w_tilde(sol, 0.01)
        except DegenerateDualError:
            continue
        assert not sol.warnings
        omega_t = np.r_[sol.w_tilde, sol.b_tilde]
        lhs = 0.01 * np.exp(-sol.support_Z() @ omega_t)
        assert np.max(np.abs(lhs - sol.duals)) <= 1e-8
        hits += 1
    assert hits >= 10


def test_zero_dual_with_unique_duals_is_degenerate():
    X = np.array([[1.0, 0.0], [1.0, 0.5], [-1.0, 0.0]])
    sol = solve_hard_margin(Dataset(X, np.array([1, 1, -1])))
    assert len(sol.support_indices) == 3
    with pytest.raises(DegenerateDualError):
        compute_w_tilde(sol, 0.01)


def test_nonunique_duals_selected_by_potential(planted_small):
    eta = 0.01
    sol = compute_w_tilde(solve_hard_margin(planted_small), eta)
    assert len(sol.support_indices) == 22
    assert any("span-violation" in w for w in sol.warnings)
    ZS = sol.support_Z()
    assert np.all(sol.duals > 0)
    # stationarity of the reselected duals
    assert np.linalg.norm(ZS.T @ sol.duals - sol.omega) <= 1e-6
    # the potential's gradient vanishes on the row space
    omega_t = np.r_[sol.w_tilde, sol.b_tilde]
    g = sol.omega - ZS.T @ (eta * np.exp(-ZS @ omega_t))
    assert np.linalg.norm(g) <= 1e-6 * np.linalg.norm(sol.omega)
    # asymmetry quantities agree with their definitions
    A_plus, A_minus, delta, b_inf = support_asymmetry(sol)
    assert math.isclose(delta, math.sqrt(A_minus / A_plus), rel_tol=1e-12)
    assert asymmetry_from_sums(A_plus, A_minus) == pytest.approx((delta, b_inf))
    assert b_inf == pytest.approx(sol.b_tilde, abs=1e-6)


def test_one_sided_support():
    ds = Dataset(np.array([[1.0], [2.0], [-3.0], [-4.0]]), np.array([1, 1, -1, -1]))
    sol = solve_hard_margin(ds, with_bias=False)
    assert sorted(sol.support_indices) == [0]
    sol = compute_w_tilde(sol, 0.01)
    assert sol.delta is None
    with pytest.raises(OneSidedSupportError):
        support_asymmetry(sol)


def test_solution_dict_round_trip(planted_small):
    sol = compute_w_tilde(solve_hard_margin(planted_small), 0.01)
    back = SvmSolution.from_dict(sol.to_dict())
    assert np.array_equal(back.w_svm, sol.w_svm) and back.delta == sol.delta
    assert back.support_indices == tuple(sorted(sol.support_indices))
