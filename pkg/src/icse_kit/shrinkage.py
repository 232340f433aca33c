"""Inequality constrained shrinkage estimation.

The combined estimator is a convex combination of the unrestricted and
restricted least-squares estimates,

    theta* = w theta_hat + (1 - w) theta_tilde,
    w = (1 - tau / (n loss(theta_hat, theta_tilde)))_+,

where the shrinkage level tau is assembled from binding-pattern diagnostics:
for each subset of inequality constraints, a projection matrix, the trace and
top eigenvalue of the associated loss-scaled matrix, a pattern probability
under the estimated normal law of the Kuhn-Tucker multipliers, and an
inverse-expected-loss weight.  Patterns are indexed by bitmask over
inequality rows; always-equality rows are implicitly part of every pattern.
With no equality rows the empty pattern is excluded from the shrinkage sum,
with equality rows present it participates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import as_matrix, as_vector, check_spd, full_row_rank, symmetrize
from .estimators import (
    ConstraintFunction,
    fit_equality_pattern,
    fit_restricted,
    fit_unrestricted,
    localizing_estimate,
)
from .exceptions import (
    CapacityError,
    DegenerateWeightsError,
    RankError,
    ShapeError,
)
from . import _rng
from .model import EstimationProblem, FitResult, LossSpec, evaluate_loss, loss_matrix
from .orthant import pattern_counts
from .qp import KTSolution, LinearConstraints, QuadraticProblem, solve_qp, solve_qp_batch

__all__ = [
    "BindingPattern",
    "PatternStats",
    "ShrinkageResult",
    "OrthantConfig",
    "enumerate_patterns",
    "projection_matrix",
    "pattern_A_stats",
    "kt_distribution",
    "gamma_weights",
    "feasible_tau",
    "shrinkage_weight",
    "fit_icse",
]

_PATTERN_CAP = 20
_IDEMPOTENT_TOL = 1e-8


@dataclass(frozen=True)
class BindingPattern:
    """A subset of binding inequality rows (0-based, sorted).

    ``count`` is the total number of binding constraints including the
    always-equality rows.
    """

    indices: tuple[int, ...]
    count: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx) or any(i < 0 for i in idx):
            raise ShapeError("pattern indices must be distinct and nonnegative")
        if self.count < len(idx):
            raise ShapeError("count cannot be below the number of inequality rows")
        object.__setattr__(self, "indices", idx)

    @property
    def mask(self) -> int:
        m = 0
        for i in self.indices:
            m |= 1 << i
        return m


@dataclass(frozen=True)
class OrthantConfig:
    """Monte Carlo settings for pattern probabilities inside fit_icse.

    ``classifier`` selects how a draw is assigned to a binding pattern:

    * ``"active_set"`` (default) draws the limit variable Z from
      N(0, Omega_hat) and records the realized active set of the constrained
      quadratic program — the exact plug-in of the restricted estimator's
      limit law.
    * ``"multiplier_signs"`` classifies sign regions of the fully binding
      Kuhn-Tucker multiplier vector under its normal law N(psi, xi).  The
      two coincide whenever R J^-1 R' is diagonal (in particular for a
      single constraint, or identity curvature with sign restrictions), but
      the sign rule misattributes binding under strongly correlated
      curvature, which inverts the documented shrinkage behavior.
    """

    draws: int = 100_000
    seed: int = 0
    prune_below: float = 1e-4
    classifier: str = "active_set"

    def __post_init__(self):
        if self.draws < 1000:
            raise ShapeError("orthant draws must be at least 1000")
        if not 0.0 <= self.prune_below < 1.0:
            raise ShapeError("prune_below must lie in [0, 1)")
        if self.classifier not in ("active_set", "multiplier_signs"):
            raise ShapeError(f"unknown classifier {self.classifier!r}")


@dataclass(frozen=True)
class PatternStats:
    """Per-pattern diagnostics feeding the shrinkage level."""

    pattern: BindingPattern
    projection: np.ndarray
    a_trace: float
    a_phimax: float
    probability: float
    prob_se: float
    expected_loss: float
    h_offset: np.ndarray
    gamma: float


@dataclass(frozen=True)
class ShrinkageResult:
    """Combined estimate with its full diagnostic table."""

    tau_star: float
    scaled_loss: float
    weight: float
    combined: np.ndarray
    pattern_table: tuple[PatternStats, ...]
    unrestricted: FitResult
    restricted: np.ndarray
    kt: KTSolution
    c_hat: np.ndarray


def enumerate_patterns(p: int, equality_rows: int = 0) -> list[BindingPattern]:
    """All subsets of p inequality rows in increasing bitmask order.

    ``count`` of each pattern adds the number of always-equality rows.
    Capped at p + equality_rows <= 20.
    """
    if p < 0 or equality_rows < 0:
        raise ShapeError("row counts must be nonnegative")
    if p + equality_rows > _PATTERN_CAP:
        raise CapacityError(f"pattern enumeration capped at {_PATTERN_CAP} rows")
    out = []
    for mask in range(1 << p):
        idx = tuple(i for i in range(p) if (mask >> i) & 1)
        out.append(BindingPattern(indices=idx, count=len(idx) + equality_rows))
    return out


def projection_matrix(j, r_rows) -> np.ndarray:
    """Oblique projection J^-1 R'(R J^-1 R')^-1 R onto the binding subspace.

    Idempotent; its transpose fixes the row space of R.  An empty row set
    yields the zero matrix.
    """
    j = check_spd(j, "curvature")
    r = np.asarray(r_rows, dtype=np.float64)
    if r.ndim == 1:
        r = r[None, :]
    if r.shape[0] == 0:
        return np.zeros_like(j)
    if r.shape[1] != j.shape[0]:
        raise ShapeError(f"R columns {r.shape[1]} != dimension {j.shape[0]}")
    if not full_row_rank(r):
        raise RankError("pattern rows are not linearly independent")
    jinv_rt = np.linalg.solve(j, r.T)
    return jinv_rt @ np.linalg.solve(r @ jinv_rt, r)


def pattern_A_stats(w, omega, j, r_rows) -> tuple[float, float]:
    """Trace and largest (real) eigenvalue of W^(1/2) Omega P' W^(1/2).

    With W equal to the inverse of Omega the spectrum is that of the
    projection itself, so the trace equals the number of binding rows and
    the top eigenvalue equals one.
    """
    w = check_spd(w, "W")
    omega = check_spd(omega, "Omega")
    r = np.asarray(r_rows, dtype=np.float64)
    if r.ndim == 1:
        r = r[None, :]
    if r.shape[0] == 0:
        return 0.0, 0.0
    proj = projection_matrix(j, r)
    core = omega @ proj.T @ w
    a_trace = float(np.trace(core))
    # A = S core S^-1-similar for the symmetric root S, so eigenvalues agree.
    eig = np.linalg.eigvals(core)
    a_phimax = float(np.max(eig.real))
    return a_trace, a_phimax


def kt_distribution(j, omega, r, c_hat) -> tuple[np.ndarray, np.ndarray]:
    """Normal law N(psi, xi) of the Kuhn-Tucker multiplier vector.

    psi = -(R J^-1 R')^-1 c_hat,
    xi  = (R J^-1 R')^-1 R Omega R' (R J^-1 R')^-1.
    """
    j = check_spd(j, "J")
    omega = check_spd(omega, "Omega")
    r = as_matrix(r, "R")
    c_hat = as_vector(c_hat, "c_hat")
    if r.shape[0] != c_hat.shape[0] or r.shape[1] != j.shape[0]:
        raise ShapeError("non-conformable R / c_hat / J")
    if not full_row_rank(r):
        raise RankError("R does not have full row rank")
    gram = r @ np.linalg.solve(j, r.T)
    gram_inv = np.linalg.inv(gram)
    psi = -gram_inv @ c_hat
    xi = gram_inv @ r @ omega @ r.T @ gram_inv
    return psi, symmetrize(xi)


def gamma_weights(patterns, probabilities, expected_losses,
                  loss_floor: float = 0.0) -> list[float]:
    """Normalized inverse-loss pattern weights.

    gamma_i is proportional to probability_i / max(loss_i, loss_floor) and
    the weights sum to one over the supplied patterns.

    Raises
    ------
    DegenerateWeightsError
        If every numerator vanishes.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    losses = np.asarray(expected_losses, dtype=np.float64)
    if len(patterns) != probs.shape[0] or probs.shape != losses.shape:
        raise ShapeError("patterns, probabilities and losses must align")
    if np.any(probs < 0) or np.any(probs > 1) or np.any(losses < 0):
        raise ShapeError("probabilities must lie in [0,1] and losses be >= 0")
    floored = np.maximum(losses, max(loss_floor, np.finfo(float).tiny))
    raw = probs / floored
    total = float(raw.sum())
    if total <= 0.0:
        raise DegenerateWeightsError("all pattern-weight numerators are zero")
    return list(raw / total)


def feasible_tau(stats) -> float:
    """Shrinkage level max(0, sum_i (trace_i - 2 phimax_i) gamma_i)."""
    total = sum(s.gamma * (s.a_trace - 2.0 * s.a_phimax) for s in stats)
    return max(0.0, float(total))


def shrinkage_weight(tau: float, scaled_loss: float) -> float:
    """Positive-part weight (1 - tau/scaled_loss)_+; zero at zero loss."""
    if tau < 0 or scaled_loss < 0:
        raise ShapeError("tau and scaled_loss must be nonnegative")
    if scaled_loss == 0.0:
        return 0.0
    return max(0.0, 1.0 - tau / scaled_loss)


def _right_inverse_apply(r_rows: np.ndarray, c_rows: np.ndarray) -> np.ndarray:
    """h = R'(R R')^-1 c for full-row-rank R."""
    return r_rows.T @ np.linalg.solve(r_rows @ r_rows.T, c_rows)


_CLASSIFY_BATCH = 1 << 14


def _active_set_counts(jhat, omega, r_full, c_hat, equality_mask,
                       draws: int, seed: int) -> dict[int, int]:
    """Realized-active-set frequencies of the plug-in limit program.

    Draws Z ~ N(0, omega) on fixed batch streams and solves
    min (1/2)(x - Z)' J (x - Z) subject to c_hat + R x >= 0 (= 0 on equality
    rows), counting the binding inequality pattern of each solution.
    """
    ineq = np.flatnonzero(~equality_mask)
    if ineq.size > _PATTERN_CAP:
        raise CapacityError(f"pattern classification capped at {_PATTERN_CAP} rows")
    cons = LinearConstraints(jacobian=r_full, intercept=c_hat,
                             equality_mask=equality_mask)
    chol = np.linalg.cholesky(omega)
    m = jhat.shape[0]
    counts: dict[int, int] = {}
    for index, start, stop in _rng.batch_ranges(draws, _CLASSIFY_BATCH):
        gen = _rng.stream(seed, _rng.DOMAIN_PATTERN, index)
        z = gen.standard_normal((stop - start, m)) @ chol.T
        if ineq.size <= 12:
            _, pids = solve_qp_batch(jhat, cons, z)
        else:
            pids = np.empty(z.shape[0], dtype=np.int64)
            for i in range(z.shape[0]):
                sol = solve_qp(QuadraticProblem(jhat, z[i]), cons)
                mask = 0
                for k, row in enumerate(ineq):
                    if row in sol.active:
                        mask |= 1 << k
                pids[i] = mask
        for mask, count in zip(*np.unique(pids, return_counts=True)):
            counts[int(mask)] = counts.get(int(mask), 0) + int(count)
    return counts


def fit_icse(problem: EstimationProblem, cons: ConstraintFunction,
             loss: LossSpec | None = None,
             orthant_cfg: OrthantConfig | None = None,
             vhat_mode: str = "robust") -> ShrinkageResult:
    """End-to-end inequality constrained shrinkage estimate.

    Fits the unrestricted and restricted estimators, estimates the law of
    the Kuhn-Tucker multipliers, classifies common normal draws by sign
    pattern on the inequality block, fits the equality-pinned estimator for
    every retained pattern, and combines everything into the data-driven
    shrinkage weight.

    Patterns whose estimated probability falls below
    ``orthant_cfg.prune_below`` are dropped from the shrinkage sum (the
    remaining weights renormalize); with no equality rows the empty pattern
    is always excluded.  If no pattern survives, the shrinkage level is zero
    and the combined estimate reduces to the unrestricted one.
    """
    loss = LossSpec.inverse_omega() if loss is None else loss
    orthant_cfg = OrthantConfig() if orthant_cfg is None else orthant_cfg

    restricted_fit, kt = fit_restricted(problem, cons, vhat_mode=vhat_mode)
    fit = fit_unrestricted(problem, vhat_mode=vhat_mode)
    w = loss_matrix(loss, fit)
    theta_hat = fit.theta
    theta_tilde = restricted_fit.theta

    c_hat = localizing_estimate(fit, cons)
    r_full = np.asarray(cons.jacobian(theta_hat), dtype=np.float64)
    ineq = cons.inequality_rows
    eq = cons.equality_rows
    n_ineq = ineq.shape[0]
    n_eq = eq.shape[0]

    if orthant_cfg.classifier == "multiplier_signs":
        psi, xi = kt_distribution(fit.jhat, fit.omega, r_full, c_hat)
        # Sign classification concerns the inequality block only; equality-row
        # multipliers are unrestricted in sign and integrate out.
        counts = pattern_counts(psi[ineq], xi[np.ix_(ineq, ineq)],
                                orthant_cfg.draws, orthant_cfg.seed)
    else:
        counts = _active_set_counts(fit.jhat, fit.omega, r_full, c_hat,
                                    cons.equality_mask, orthant_cfg.draws,
                                    orthant_cfg.seed)

    loss_floor = 1e-8 * float(np.trace(w @ fit.omega))
    table: list[PatternStats] = []
    included: list[int] = []
    for mask in sorted(counts):
        prob = counts[mask] / orthant_cfg.draws
        if prob < orthant_cfg.prune_below:
            continue
        local = tuple(k for k in range(n_ineq) if (mask >> k) & 1)
        rows_ineq = [int(ineq[k]) for k in local]
        pattern = BindingPattern(indices=tuple(rows_ineq),
                                 count=len(rows_ineq) + n_eq)
        rows_all = sorted(set(rows_ineq) | set(int(i) for i in eq))
        r_rows = r_full[rows_all]
        if len(rows_all) == 0:
            proj = np.zeros_like(fit.jhat)
            a_trace, a_phimax = 0.0, 0.0
            h_offset = np.zeros(fit.n_params)
            expected = 0.0
        else:
            proj = projection_matrix(fit.jhat, r_rows)
            a_trace, a_phimax = pattern_A_stats(w, fit.omega, fit.jhat, r_rows)
            h_offset = proj @ _right_inverse_apply(r_rows, c_hat[rows_all])
            theta_iota = fit_equality_pattern(problem, cons, rows_ineq,
                                              vhat_mode=vhat_mode).theta
            expected = fit.n * evaluate_loss(w, theta_hat, theta_iota)
        se = float(np.sqrt(prob * (1.0 - prob) / orthant_cfg.draws))
        stats = PatternStats(pattern=pattern, projection=proj, a_trace=a_trace,
                             a_phimax=a_phimax, probability=prob, prob_se=se,
                             expected_loss=expected, h_offset=h_offset, gamma=0.0)
        table.append(stats)
        if len(rows_all) > 0:
            included.append(len(table) - 1)

    if included:
        sub = [table[i] for i in included]
        try:
            gammas = gamma_weights([s.pattern for s in sub],
                                   [s.probability for s in sub],
                                   [s.expected_loss for s in sub],
                                   loss_floor=loss_floor)
        except DegenerateWeightsError:
            gammas = [0.0] * len(sub)
        for i, g in zip(included, gammas):
            old = table[i]
            table[i] = PatternStats(pattern=old.pattern, projection=old.projection,
                                    a_trace=old.a_trace, a_phimax=old.a_phimax,
                                    probability=old.probability, prob_se=old.prob_se,
                                    expected_loss=old.expected_loss,
                                    h_offset=old.h_offset, gamma=g)

    tau_star = feasible_tau([table[i] for i in included]) if included else 0.0
    scaled_loss = fit.n * evaluate_loss(w, theta_hat, theta_tilde)
    weight = shrinkage_weight(tau_star, scaled_loss)
    combined = weight * theta_hat + (1.0 - weight) * theta_tilde

    return ShrinkageResult(tau_star=tau_star, scaled_loss=scaled_loss,
                           weight=weight, combined=combined,
                           pattern_table=tuple(table), unrestricted=fit,
                           restricted=theta_tilde, kt=kt, c_hat=c_hat)
