"""Unrestricted, inequality-restricted, and equality-pinned least squares.

The restricted fit maps the constrained least-squares problem to a small
quadratic program in the scaled deviation u = sqrt(n) (theta - theta_hat):
for linear constraints this is exact, and nonlinear constraints are handled
by a single linearization at the unrestricted estimate (one-step estimator).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._linalg import as_vector, full_row_rank
from .exceptions import NumericalError, RankError, ShapeError
from .model import EstimationProblem, FitResult
from .qp import KTSolution, LinearConstraints, QuadraticProblem, solve_qp

__all__ = [
    "ConstraintFunction",
    "linear_constraints",
    "sign_restrictions",
    "sign_and_zero_constraints",
    "fit_unrestricted",
    "fit_restricted",
    "fit_equality_pattern",
    "localizing_estimate",
]

_COND_CAP = 1e12
_FD_STEP = 1e-6
_FD_RTOL = 1e-5


@dataclass(frozen=True)
class ConstraintFunction:
    """Differentiable constraint map r(theta) with r >= 0 on inequality rows.

    Attributes
    ----------
    evaluate : callable
        theta -> r(theta), length p.
    jacobian : callable
        theta -> dr/dtheta', shape (p, m); must have full row rank at the
        unrestricted estimate.
    equality_mask : ndarray of bool, shape (p,)
        True rows hold with equality instead of >=.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    equality_mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.equality_mask, dtype=bool)
        if mask.ndim != 1 or mask.shape[0] < 1:
            raise ShapeError("equality_mask must be a nonempty 1-D bool array")
        mask.setflags(write=False)
        object.__setattr__(self, "equality_mask", mask)

    @property
    def n_constraints(self) -> int:
        return self.equality_mask.shape[0]

    @property
    def inequality_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.equality_mask)

    @property
    def equality_rows(self) -> np.ndarray:
        return np.flatnonzero(self.equality_mask)


def linear_constraints(r_matrix, intercept=None, equality_mask=None) -> ConstraintFunction:
    """Constraint r(theta) = R theta + r0 (inequality rows: >= 0)."""
    r = np.array(r_matrix, dtype=np.float64)
    if r.ndim != 2:
        raise ShapeError("R must be 2-D")
    p = r.shape[0]
    r0 = np.zeros(p) if intercept is None else as_vector(intercept, "intercept").copy()
    if r0.shape[0] != p:
        raise ShapeError("intercept length must match R rows")
    mask = np.zeros(p, dtype=bool) if equality_mask is None else np.asarray(equality_mask, dtype=bool)
    return ConstraintFunction(
        evaluate=lambda theta: r @ theta + r0,
        jacobian=lambda theta: r,
        equality_mask=mask,
    )


def sign_restrictions(m: int, coords=None) -> ConstraintFunction:
    """Nonnegativity of the given coordinates (default: all m)."""
    coords = list(range(m)) if coords is None else [int(i) for i in coords]
    r = np.zeros((len(coords), m))
    for row, i in enumerate(coords):
        r[row, i] = 1.0
    return linear_constraints(r)


def sign_and_zero_constraints(k1: int, k2: int) -> ConstraintFunction:
    """First k1 coordinates >= 0 (inequality), last k2 pinned to 0 (equality)."""
    m = k1 + k2
    mask = np.array([False] * k1 + [True] * k2)
    return linear_constraints(np.eye(m), equality_mask=mask)


def _check_condition(xtx: np.ndarray):
    cond = np.linalg.cond(xtx)
    if not np.isfinite(cond) or cond > _COND_CAP:
        raise NumericalError(f"design is ill-conditioned (cond(X'X) = {cond:.3e})")


def fit_unrestricted(problem: EstimationProblem,
                     vhat_mode: str = "robust") -> FitResult:
    """Ordinary least squares with criterion curvature and score variance.

    ``vhat_mode`` selects the score-variance estimate: ``"robust"`` uses
    (1/n) sum x_i x_i' e_i^2, ``"homoskedastic"`` uses s^2 X'X/n with
    s^2 = RSS/(n - m).
    """
    x = problem.design
    y = problem.response
    n, m = x.shape
    xtx = x.T @ x
    _check_condition(xtx)
    theta = np.linalg.solve(xtx, x.T @ y)
    resid = y - x @ theta
    jhat = xtx / n
    if vhat_mode == "robust":
        vhat = (x * resid[:, None] ** 2).T @ x / n
    elif vhat_mode == "homoskedastic":
        sigma2 = float(resid @ resid) / (n - m)
        vhat = sigma2 * jhat
    else:
        raise ShapeError(f"unknown vhat_mode {vhat_mode!r}")
    jinv = np.linalg.inv(jhat)
    omega = jinv @ vhat @ jinv
    omega = 0.5 * (omega + omega.T)
    return FitResult(theta=theta, jhat=jhat, vhat=vhat, omega=omega, n=n)


def _validate_jacobian(cons: ConstraintFunction, theta: np.ndarray) -> np.ndarray:
    """Spot-check the supplied jacobian against central finite differences."""
    r = np.asarray(cons.jacobian(theta), dtype=np.float64)
    p, m = cons.n_constraints, theta.shape[0]
    if r.shape != (p, m):
        raise ShapeError(f"jacobian must be ({p}, {m}), got {r.shape}")
    fd = np.empty_like(r)
    for j in range(m):
        h = _FD_STEP * (1.0 + abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        fd[:, j] = (np.asarray(cons.evaluate(up)) - np.asarray(cons.evaluate(dn))) / (2 * h)
    scale = 1.0 + np.abs(r)
    if np.max(np.abs(fd - r) / scale) > _FD_RTOL:
        raise ShapeError("constraint jacobian disagrees with finite differences")
    if not full_row_rank(r):
        raise RankError("constraint jacobian is not full row rank at theta_hat")
    return r


def fit_restricted(problem: EstimationProblem, cons: ConstraintFunction,
                   vhat_mode: str = "robust") -> tuple[FitResult, KTSolution]:
    """Least squares restricted to r(theta) >= 0 / = 0.

    Linear constraints are imposed exactly; nonlinear ones via one
    linearization at the unrestricted estimate.  If the unrestricted
    estimate is already feasible it is returned bit-identically.

    Returns
    -------
    (fit, kt)
        ``fit`` carries the restricted point estimate (curvature and
        covariance blocks are those of the unrestricted fit); ``kt`` is the
        Kuhn-Tucker solution of the deviation program in
        u = sqrt(n) (theta - theta_hat), whose multipliers identify the
        binding pattern.
    """
    fit = fit_unrestricted(problem, vhat_mode=vhat_mode)
    theta_hat = fit.theta
    r_theta = np.asarray(cons.evaluate(theta_hat), dtype=np.float64)
    r_jac = _validate_jacobian(cons, theta_hat)
    eq = cons.equality_mask

    feasible = bool(np.all(r_theta[~eq] >= 0.0)) and bool(np.all(r_theta[eq] == 0.0))
    if feasible:
        kt = KTSolution(
            lam=np.zeros(theta_hat.shape[0]),
            mu=np.zeros(cons.n_constraints),
            active=tuple(np.flatnonzero(r_theta == 0.0)),
            objective=0.0,
        )
        return fit, kt

    root_n = np.sqrt(fit.n)
    qp = QuadraticProblem(curvature=fit.jhat, center=np.zeros(theta_hat.shape[0]))
    lincon = LinearConstraints(jacobian=r_jac, intercept=root_n * r_theta,
                               equality_mask=eq)
    kt = solve_qp(qp, lincon)
    theta_restricted = theta_hat + kt.lam / root_n
    restricted = FitResult(theta=theta_restricted, jhat=fit.jhat, vhat=fit.vhat,
                           omega=fit.omega, n=fit.n)
    return restricted, kt


def fit_equality_pattern(problem: EstimationProblem, cons: ConstraintFunction,
                         binding_rows, vhat_mode: str = "robust") -> FitResult:
    """Least squares with the given inequality rows pinned to equality.

    ``binding_rows`` lists inequality-row indices to hold with equality;
    always-equality rows of the constraint are pinned as well.  The empty
    pattern with no equality rows returns the unrestricted fit unchanged.
    """
    fit = fit_unrestricted(problem, vhat_mode=vhat_mode)
    theta_hat = fit.theta
    rows = sorted(set(int(i) for i in binding_rows) | set(cons.equality_rows.tolist()))
    if any(i < 0 or i >= cons.n_constraints for i in rows):
        raise ShapeError("binding row index out of range")
    if not rows:
        return fit
    r_full = np.asarray(cons.jacobian(theta_hat), dtype=np.float64)
    r_rows = r_full[rows]
    if not full_row_rank(r_rows):
        raise RankError("selected constraint rows are not linearly independent")
    r_val = np.asarray(cons.evaluate(theta_hat), dtype=np.float64)[rows]
    # Restricted-OLS correction: theta - J^-1 R'(R J^-1 R')^-1 r(theta_hat),
    # exact for linear constraints, one-step for nonlinear ones.
    jinv_rt = np.linalg.solve(fit.jhat, r_rows.T)
    gram = r_rows @ jinv_rt
    theta = theta_hat - jinv_rt @ np.linalg.solve(gram, r_val)
    return FitResult(theta=theta, jhat=fit.jhat, vhat=fit.vhat,
                     omega=fit.omega, n=fit.n)


def localizing_estimate(fit: FitResult, cons: ConstraintFunction) -> np.ndarray:
    """Scaled constraint slackness sqrt(n) r(theta_hat)."""
    return np.sqrt(fit.n) * np.asarray(cons.evaluate(fit.theta), dtype=np.float64)
