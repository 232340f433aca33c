"""Problem containers and quadratic loss.

The concrete estimation criterion throughout the package is least squares:
a problem is a full-column-rank design ``X`` with response ``y``, and every
downstream routine consumes only the fitted summary (point estimate, criterion
curvature, score variance, sandwich covariance), so other extremum criteria
can be plugged in by providing an equivalent :class:`FitResult`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import (
    RANK_RTOL,
    as_matrix,
    as_vector,
    check_psd,
    check_spd,
    full_column_rank,
    quad_form,
)
from .exceptions import LossSpecError, RankError, ShapeError

__all__ = [
    "EstimationProblem",
    "LossSpec",
    "FitResult",
    "build_linear_problem",
    "loss_matrix",
    "evaluate_loss",
]


@dataclass(frozen=True)
class EstimationProblem:
    """A linear least-squares problem with validated design.

    Attributes
    ----------
    design : ndarray, shape (n, m)
        Regressor matrix X, full column rank.
    response : ndarray, shape (n,)
        Response vector y.
    """

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.design, "design")
        y = as_vector(self.response, "response")
        n, m = x.shape
        if y.shape[0] != n:
            raise ShapeError(f"response length {y.shape[0]} != design rows {n}")
        if m < 1 or n <= m:
            raise ShapeError(f"need n > m >= 1, got n={n}, m={m}")
        if not full_column_rank(x, rtol=RANK_RTOL):
            raise RankError("design matrix is rank deficient")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)

    @property
    def n_obs(self) -> int:
        return self.design.shape[0]

    @property
    def n_params(self) -> int:
        return self.design.shape[1]


_RULES = ("identity", "inverse_omega", "custom")


@dataclass(frozen=True)
class LossSpec:
    """Weight-matrix rule for the quadratic loss (T - t)'W(T - t).

    ``identity`` uses W = I, ``inverse_omega`` uses the inverse of the fitted
    sandwich covariance (robust to reparameterisation scale), and ``custom``
    carries an explicit SPD matrix.
    """

    rule: str = "inverse_omega"
    matrix: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.rule not in _RULES:
            raise LossSpecError(f"unknown loss rule {self.rule!r}; expected one of {_RULES}")
        if self.rule == "custom":
            if self.matrix is None:
                raise LossSpecError("custom loss rule requires a matrix")
            try:
                w = check_spd(self.matrix, "loss matrix")
            except (ShapeError, RankError) as exc:
                raise LossSpecError(str(exc)) from exc
            w.setflags(write=False)
            object.__setattr__(self, "matrix", w)
        elif self.matrix is not None:
            raise LossSpecError(f"rule {self.rule!r} does not take a matrix")

    @classmethod
    def identity(cls) -> "LossSpec":
        return cls(rule="identity")

    @classmethod
    def inverse_omega(cls) -> "LossSpec":
        return cls(rule="inverse_omega")

    @classmethod
    def custom(cls, matrix) -> "LossSpec":
        return cls(rule="custom", matrix=np.asarray(matrix, dtype=np.float64))


@dataclass(frozen=True)
class FitResult:
    """Fitted summary of an extremum problem.

    Attributes
    ----------
    theta : ndarray, shape (m,)
        Point estimate.
    jhat : ndarray, shape (m, m)
        Negative Hessian of the sample criterion (X'X/n for least squares).
    vhat : ndarray, shape (m, m)
        Score variance estimate.
    omega : ndarray, shape (m, m)
        Sandwich covariance jhat^-1 vhat jhat^-1.
    n : int
        Sample size.

    omega is positive definite whenever the residuals carry any noise; the
    degenerate zero-residual fit is allowed (omega PSD) so exact-recovery
    problems remain representable.
    """

    theta: np.ndarray
    jhat: np.ndarray
    vhat: np.ndarray
    omega: np.ndarray
    n: int

    def __post_init__(self):
        theta = as_vector(self.theta, "theta")
        m = theta.shape[0]
        jhat = check_spd(self.jhat, "jhat")
        vhat = as_matrix(self.vhat, "vhat")
        omega = check_psd(self.omega, "omega")
        for name, a in (("jhat", jhat), ("vhat", vhat), ("omega", omega)):
            if a.shape != (m, m):
                raise ShapeError(f"{name} must be {m}x{m}, got {a.shape}")
        jinv = np.linalg.inv(jhat)
        sandwich = jinv @ vhat @ jinv
        scale = max(1.0, float(np.abs(sandwich).max()))
        if not np.allclose(omega, sandwich, atol=1e-10 * scale):
            raise ShapeError("omega does not equal jhat^-1 vhat jhat^-1")
        if int(self.n) <= 0:
            raise ShapeError("n must be positive")
        for a in (theta, jhat, vhat, omega):
            a.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "jhat", jhat)
        object.__setattr__(self, "vhat", vhat)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "n", int(self.n))

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]


def build_linear_problem(design, response) -> EstimationProblem:
    """Validate and wrap a design/response pair.

    Raises
    ------
    ShapeError
        If dimensions disagree.
    RankError
        If the design is rank deficient (singular values below
        ``1e-10`` times the largest).
    """
    return EstimationProblem(np.array(design, dtype=np.float64),
                             np.array(response, dtype=np.float64))


def loss_matrix(spec: LossSpec, fit: FitResult) -> np.ndarray:
    """Resolve a loss specification to a concrete SPD weight matrix."""
    m = fit.n_params
    if spec.rule == "identity":
        return np.eye(m)
    if spec.rule == "inverse_omega":
        try:
            np.linalg.cholesky(fit.omega)
        except np.linalg.LinAlgError as exc:
            raise LossSpecError("omega is singular; inverse-omega loss "
                                "undefined") from exc
        w = np.linalg.inv(fit.omega)
        return 0.5 * (w + w.T)
    w = spec.matrix
    if w.shape != (m, m):
        raise LossSpecError(f"custom loss matrix must be {m}x{m}, got {w.shape}")
    return np.array(w)


def evaluate_loss(w, a, b) -> float:
    """Quadratic loss (a - b)'W(a - b); zero iff a == b for SPD W."""
    w = as_matrix(w, "W")
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape or w.shape != (a.shape[0], a.shape[0]):
        raise ShapeError(
            f"non-conformable loss inputs: W {w.shape}, a {a.shape}, b {b.shape}"
        )
    return quad_form(w, a - b)
