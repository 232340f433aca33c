"""Active-set solver against closed forms and the brute-force oracle."""

import numpy as np
import pytest

from icse_kit import (
    CapacityError,
    LinearConstraints,
    QuadraticProblem,
    RankError,
    brute_force_qp,
    kt_residuals,
    solve_qp,
)
from icse_kit.qp import solve_qp_batch

KKT_TOL = 1e-8


def _random_instance(rng, m_max=5, p_max=4, equalities=False):
    m = int(rng.integers(2, m_max + 1))
    p = int(rng.integers(1, min(m, p_max) + 1))
    a = rng.standard_normal((m, m))
    j = a @ a.T + m * np.eye(m)
    z = 2.0 * rng.standard_normal(m)
    r = rng.standard_normal((p, m))
    c = rng.standard_normal(p)
    mask = (rng.random(p) < 0.3) if equalities else None
    return QuadraticProblem(j, z), LinearConstraints(r, c, mask)


def test_interior_point():
    sol = solve_qp(QuadraticProblem(np.eye(2), np.array([1.0, 1.0])),
                   LinearConstraints(np.eye(2), np.zeros(2)))
    assert np.allclose(sol.lam, [1.0, 1.0], atol=1e-12)
    assert np.allclose(sol.mu, 0.0, atol=1e-12)
    assert sol.active == ()


def test_halfspace_projection():
    sol = solve_qp(QuadraticProblem(np.eye(2), np.array([-1.0, 1.0])),
                   LinearConstraints(np.eye(2), np.zeros(2)))
    assert np.allclose(sol.lam, [0.0, 1.0], atol=1e-12)
    assert np.allclose(sol.mu, [1.0, 0.0], atol=1e-12)
    assert sol.active == (0,)


def test_solver_matches_brute_force_small_case():
    problem = QuadraticProblem(np.array([[2.0, 0.5], [0.5, 1.0]]),
                               np.array([-1.0, -0.5]))
    cons = LinearConstraints(np.eye(2), np.array([0.2, -0.1]))
    a = solve_qp(problem, cons)
    b = brute_force_qp(problem, cons)
    assert abs(a.objective - b.objective) <= KKT_TOL
    assert np.allclose(a.lam, b.lam, atol=1e-8)


def test_brute_force_interior_and_fully_binding():
    cons = LinearConstraints(np.eye(2), np.zeros(2))
    interior = brute_force_qp(QuadraticProblem(np.eye(2), np.array([1.0, 1.0])), cons)
    assert np.allclose(interior.lam, [1.0, 1.0], atol=1e-12)
    binding = brute_force_qp(QuadraticProblem(np.eye(2), np.array([-1.0, -1.0])), cons)
    assert np.allclose(binding.lam, [0.0, 0.0], atol=1e-12)
    assert np.allclose(binding.mu, [1.0, 1.0], atol=1e-12)


def test_randomized_oracle_agreement():
    rng = np.random.default_rng(42)
    for _ in range(200):
        problem, cons = _random_instance(rng)
        a = solve_qp(problem, cons)
        b = brute_force_qp(problem, cons)
        assert abs(a.objective - b.objective) <= KKT_TOL
        res = kt_residuals(a, problem, cons)
        assert max(res) <= KKT_TOL


def test_randomized_oracle_agreement_with_equalities():
    rng = np.random.default_rng(43)
    for _ in range(100):
        problem, cons = _random_instance(rng, equalities=True)
        a = solve_qp(problem, cons)
        b = brute_force_qp(problem, cons)
        assert abs(a.objective - b.objective) <= KKT_TOL
        res = kt_residuals(a, problem, cons)
        assert max(res) <= KKT_TOL


def test_kt_residuals_detect_perturbation():
    problem = QuadraticProblem(np.eye(2), np.array([-1.0, 1.0]))
    cons = LinearConstraints(np.eye(2), np.zeros(2))
    sol = solve_qp(problem, cons)
    assert max(kt_residuals(sol, problem, cons)) <= KKT_TOL
    bumped = type(sol)(lam=sol.lam + np.array([0.1, 0.0]), mu=sol.mu,
                       active=sol.active, objective=sol.objective)
    res = kt_residuals(bumped, problem, cons)
    assert max(res.feasibility, res.slackness) == pytest.approx(0.1, rel=1e-6)


def test_fully_binding_multiplier_closed_form():
    # When the all-binding pattern is optimal, the multipliers match
    # -(R J^-1 R')^-1 (R z + c).
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(200):
        problem, cons = _random_instance(rng)
        sol = solve_qp(problem, cons)
        p = cons.n_rows
        if len(sol.active) != p:
            continue
        hits += 1
        r, c = cons.jacobian, cons.intercept
        gram = r @ np.linalg.solve(problem.curvature, r.T)
        mu_closed = -np.linalg.solve(gram, r @ problem.center + c)
        assert np.allclose(sol.mu, mu_closed, atol=1e-8)
    assert hits > 5


def test_translation_equivariance():
    rng = np.random.default_rng(11)
    for _ in range(50):
        problem, cons = _random_instance(rng)
        d = rng.standard_normal(problem.dim)
        base = solve_qp(problem, cons)
        shifted = solve_qp(
            QuadraticProblem(problem.curvature, problem.center + d),
            LinearConstraints(cons.jacobian, cons.intercept - cons.jacobian @ d,
                              cons.equality_mask),
        )
        assert np.allclose(shifted.lam, base.lam + d, atol=1e-8)
        assert np.allclose(shifted.mu, base.mu, atol=1e-8)


def test_warm_start_reaches_same_solution():
    rng = np.random.default_rng(13)
    for _ in range(30):
        problem, cons = _random_instance(rng)
        cold = solve_qp(problem, cons)
        warm = solve_qp(problem, cons, warm_start=cold.active)
        assert abs(cold.objective - warm.objective) <= 1e-10


def test_equality_rows_hold_exactly():
    rng = np.random.default_rng(17)
    problem, _ = _random_instance(rng, m_max=4, p_max=1)
    m = problem.dim
    r = np.vstack([np.eye(m)[:1], rng.standard_normal((1, m))])
    cons = LinearConstraints(r, np.array([0.3, -0.2]),
                             np.array([True, False]))
    sol = solve_qp(problem, cons)
    resid = cons.intercept + cons.jacobian @ sol.lam
    assert abs(resid[0]) <= 1e-10
    assert resid[1] >= -1e-10


def test_rank_deficient_constraints_rejected():
    with pytest.raises(RankError):
        LinearConstraints(np.array([[1.0, 0.0], [2.0, 0.0]]), np.zeros(2))


def test_brute_force_capacity_cap():
    m = 25
    problem = QuadraticProblem(np.eye(m), np.zeros(m))
    cons = LinearConstraints(np.eye(m)[:21], np.zeros(21))
    with pytest.raises(CapacityError):
        brute_force_qp(problem, cons)


def test_batch_solver_matches_loop():
    rng = np.random.default_rng(23)
    for _ in range(20):
        problem, cons = _random_instance(rng, equalities=True)
        centers = rng.standard_normal((50, problem.dim))
        lams, pids = solve_qp_batch(problem.curvature, cons, centers)
        ineq = cons.inequality_rows
        for i in range(50):
            sol = solve_qp(QuadraticProblem(problem.curvature, centers[i]), cons)
            d = lams[i] - centers[i]
            obj = 0.5 * float(d @ problem.curvature @ d)
            assert abs(obj - sol.objective) <= 1e-8
            assert pids[i] >= 0
            # pattern bits refer to inequality rows
            for k, row in enumerate(ineq):
                if (int(pids[i]) >> k) & 1:
                    resid = cons.intercept[row] + cons.jacobian[row] @ lams[i]
                    assert abs(resid) <= 1e-7
