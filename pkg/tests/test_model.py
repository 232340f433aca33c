"""Problem containers, loss matrices, and quadratic loss."""

import numpy as np
import pytest

from icse_kit import (
    LossSpec,
    LossSpecError,
    RankError,
    ShapeError,
    build_linear_problem,
    evaluate_loss,
    fit_unrestricted,
    loss_matrix,
)
from icse_kit.mc_study import MCConfig, generate_dgp


def test_build_problem_identity_padded():
    x = np.vstack([np.eye(3), np.eye(3)])
    y = np.arange(6.0)
    problem = build_linear_problem(x, y)
    assert problem.n_obs == 6 and problem.n_params == 3


def test_build_problem_duplicated_column_rank_error():
    rng = np.random.default_rng(0)
    col = rng.standard_normal(10)
    x = np.column_stack([col, col, rng.standard_normal(10)])
    with pytest.raises(RankError):
        build_linear_problem(x, rng.standard_normal(10))


def test_build_problem_dimension_mismatch():
    with pytest.raises(ShapeError):
        build_linear_problem(np.eye(4), np.ones(3))


def test_build_problem_dgp_design_full_rank():
    cfg = MCConfig(n=100, k1=5, k2=0, b_grid=(0.3,), replications=100, seed=1)
    problem, _ = generate_dgp(cfg, 0.3, 0)
    # Independent decomposition check of the rank invariant.
    s = np.linalg.svd(problem.design, compute_uv=False)
    assert s[-1] > 1e-10 * s[0]
    assert problem.design.shape == (100, 5)


def _dgp_fit(seed=3, n=400):
    cfg = MCConfig(n=n, k1=5, k2=3, b_grid=(0.2,), replications=100, seed=seed)
    problem, _ = generate_dgp(cfg, 0.2, 0)
    return fit_unrestricted(problem)


def test_loss_matrix_identity():
    fit = _dgp_fit()
    assert np.array_equal(loss_matrix(LossSpec.identity(), fit), np.eye(8))


def test_loss_matrix_scalar_inverse():
    fit = _dgp_fit()
    m = fit.n_params
    doubled = type(fit)(theta=fit.theta, jhat=np.eye(m), vhat=2.0 * np.eye(m),
                        omega=2.0 * np.eye(m), n=fit.n)
    w = loss_matrix(LossSpec.inverse_omega(), doubled)
    assert np.allclose(w, 0.5 * np.eye(m), atol=1e-12)


def test_loss_matrix_inverse_omega_multiplies_back():
    fit = _dgp_fit()
    w = loss_matrix(LossSpec.inverse_omega(), fit)
    assert np.max(np.abs(w @ fit.omega - np.eye(8))) <= 1e-10


def test_loss_matrix_custom_requires_spd():
    with pytest.raises(LossSpecError):
        LossSpec.custom(np.array([[1.0, 2.0], [2.0, 1.0]]))  # indefinite
    with pytest.raises(LossSpecError):
        LossSpec.custom(np.array([[1.0, 0.5], [0.4, 1.0]]))  # asymmetric


def test_evaluate_loss_examples():
    assert evaluate_loss(np.eye(2), [1.0, 2.0], [1.0, 2.0]) == 0.0
    assert evaluate_loss(np.eye(2), [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)
    w = np.diag([2.0, 3.0])
    assert evaluate_loss(w, [1.0, 1.0], [0.0, 0.0]) == pytest.approx(5.0)


def test_evaluate_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        evaluate_loss(np.eye(2), [1.0, 2.0], [1.0, 2.0, 3.0])


def test_evaluate_loss_nonnegative_and_symmetric():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = rng.integers(1, 6)
        a = rng.standard_normal((m, m))
        w = a @ a.T + m * np.eye(m)
        u, v = rng.standard_normal(m), rng.standard_normal(m)
        val = evaluate_loss(w, u, v)
        assert val >= 0.0
        assert val == pytest.approx(evaluate_loss(w, v, u), rel=1e-12)


def test_fit_result_sandwich_identity_enforced():
    fit = _dgp_fit()
    jinv = np.linalg.inv(fit.jhat)
    expected = jinv @ fit.vhat @ jinv
    assert np.allclose(fit.omega, expected, atol=1e-10 * np.abs(expected).max())
    with pytest.raises(ShapeError):
        type(fit)(theta=fit.theta, jhat=fit.jhat, vhat=fit.vhat,
                  omega=fit.omega + 0.01 * np.eye(8), n=fit.n)
