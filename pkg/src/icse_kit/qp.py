"""Strictly convex quadratic programs with linear constraints.

Solves ``min (1/2)(x - z)'J(x - z)`` subject to ``c + Rx >= 0`` on inequality
rows and ``c + Rx = 0`` on equality rows, returning the minimizer together
with its Kuhn-Tucker multipliers and active set.  The solver is a primal
active-set method started from the fully binding point (which is always
feasible when R has full row rank), so no separate phase-1 is needed.  A
brute-force enumerator over binding patterns serves as an independent oracle,
and a vectorized enumerator handles large batches of centers sharing one
constraint system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._linalg import as_matrix, as_vector, check_spd, full_row_rank
from .exceptions import CapacityError, NumericalError, RankError, ShapeError

__all__ = [
    "QuadraticProblem",
    "LinearConstraints",
    "KTSolution",
    "KTResiduals",
    "solve_qp",
    "brute_force_qp",
    "solve_qp_batch",
    "kt_residuals",
]

# A constraint counts as active when |c_j + R_j x| <= ACTIVITY_RTOL * (1 + |c_j|).
ACTIVITY_RTOL = 1e-10
_FEAS_TOL = 1e-11
_DUAL_TOL = 1e-11
_BRUTE_CAP = 20


@dataclass(frozen=True)
class QuadraticProblem:
    """Curvature J (SPD) and center z of (1/2)(x - z)'J(x - z)."""

    curvature: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        j = check_spd(self.curvature, "curvature")
        z = as_vector(self.center, "center")
        if z.shape[0] != j.shape[0]:
            raise ShapeError(f"center length {z.shape[0]} != curvature size {j.shape[0]}")
        j.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "curvature", j)
        object.__setattr__(self, "center", z)

    @property
    def dim(self) -> int:
        return self.center.shape[0]


@dataclass(frozen=True)
class LinearConstraints:
    """Constraint system c + Rx >= 0 (rows flagged equality hold with =).

    R must have full row rank, which also guarantees the system is feasible.
    Row indices are 0-based throughout.
    """

    jacobian: np.ndarray
    intercept: np.ndarray
    equality_mask: np.ndarray | None = None

    def __post_init__(self):
        r = as_matrix(self.jacobian, "jacobian")
        c = as_vector(self.intercept, "intercept")
        p = r.shape[0]
        if p < 1:
            raise ShapeError("need at least one constraint row")
        if c.shape[0] != p:
            raise ShapeError(f"intercept length {c.shape[0]} != rows {p}")
        mask = self.equality_mask
        mask = np.zeros(p, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != (p,):
            raise ShapeError(f"equality_mask must have shape ({p},)")
        if not full_row_rank(r):
            raise RankError("constraint jacobian does not have full row rank")
        r.setflags(write=False)
        c.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "jacobian", r)
        object.__setattr__(self, "intercept", c)
        object.__setattr__(self, "equality_mask", mask)

    @property
    def n_rows(self) -> int:
        return self.jacobian.shape[0]

    @property
    def equality_rows(self) -> np.ndarray:
        return np.flatnonzero(self.equality_mask)

    @property
    def inequality_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.equality_mask)


@dataclass(frozen=True)
class KTSolution:
    """Minimizer, multipliers (full p-vector, zero on inactive rows),
    geometric active set, and objective value."""

    lam: np.ndarray
    mu: np.ndarray
    active: tuple[int, ...]
    objective: float


class KTResiduals(NamedTuple):
    stationarity: float
    feasibility: float
    slackness: float
    dual_feasibility: float


def _solve_working_set(j: np.ndarray, z: np.ndarray, r: np.ndarray,
                       c: np.ndarray, rows: np.ndarray):
    """Equality-constrained minimizer over a working set of rows.

    Returns (x, mu_rows) where mu solves J(x - z) = R_w' mu and
    c_w + R_w x = 0.  One round of iterative refinement keeps the
    complementarity products small even when the working-set gram matrix is
    ill conditioned and the multipliers are large.
    """
    if rows.size == 0:
        return z.copy(), np.zeros(0)
    rw = r[rows]
    cw = c[rows]
    try:
        jinv_rt = np.linalg.solve(j, rw.T)
        gram = rw @ jinv_rt
        mu = np.linalg.solve(gram, -(cw + rw @ z))
        x = z + jinv_rt @ mu
        for _ in range(2):
            res_stat = j @ (x - z) - rw.T @ mu
            res_feas = cw + rw @ x
            if (np.max(np.abs(res_feas), initial=0.0) < 1e-14
                    and np.max(np.abs(res_stat), initial=0.0) < 1e-12):
                break
            d_mu = np.linalg.solve(gram, -res_feas + rw @ np.linalg.solve(j, res_stat))
            d_x = np.linalg.solve(j, rw.T @ d_mu - res_stat)
            mu = mu + d_mu
            x = x + d_x
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular working-set system") from exc
    return x, mu


def _activity_tol(c: np.ndarray) -> np.ndarray:
    return ACTIVITY_RTOL * (1.0 + np.abs(c))


def _geometric_active(x: np.ndarray, cons: LinearConstraints) -> tuple[int, ...]:
    resid = cons.intercept + cons.jacobian @ x
    return tuple(int(i) for i in
                 np.flatnonzero(np.abs(resid) <= _activity_tol(cons.intercept)))


def _finalize(x: np.ndarray, mu_rows: np.ndarray, rows: np.ndarray,
              problem: QuadraticProblem, cons: LinearConstraints) -> KTSolution:
    mu = np.zeros(cons.n_rows)
    mu[rows] = mu_rows
    d = x - problem.center
    obj = 0.5 * float(d @ problem.curvature @ d)
    return KTSolution(lam=x, mu=mu, active=_geometric_active(x, cons), objective=obj)


def solve_qp(problem: QuadraticProblem, constraints: LinearConstraints,
             warm_start: Sequence[int] | None = None) -> KTSolution:
    """Primal active-set solve of the constrained quadratic program.

    Parameters
    ----------
    problem, constraints
        Validated problem data; constraint rows must be jointly independent.
    warm_start : sequence of int, optional
        Initial working set (inequality row indices).  Defaults to all rows,
        which makes the fully binding point the (always feasible) start.

    Raises
    ------
    NumericalError
        On a singular working-set subsystem or when the iteration cap
        ``100 (p + m)`` is exceeded.
    """
    j = problem.curvature
    z = problem.center
    r = constraints.jacobian
    c = constraints.intercept
    p, m = r.shape
    if z.shape[0] != m:
        raise ShapeError(f"center dim {z.shape[0]} != constraint columns {m}")
    eq_rows = set(constraints.equality_rows.tolist())

    if warm_start is None:
        working = list(range(p))
    else:
        working = sorted(set(int(i) for i in warm_start) | eq_rows)
        if any(i < 0 or i >= p for i in working):
            raise ShapeError("warm_start row index out of range")

    # Start from the minimizer pinned to the initial working set; with full
    # row rank it satisfies every working row exactly, and the full working
    # set yields a globally feasible point.
    rows = np.array(working, dtype=int)
    x, _ = _solve_working_set(j, z, r, c, rows)
    resid = c + r @ x
    if np.min(resid[~constraints.equality_mask], initial=0.0) < -1e-8:
        # Partial warm start can be infeasible; fall back to fully binding.
        working = list(range(p))
        rows = np.array(working, dtype=int)
        x, _ = _solve_working_set(j, z, r, c, rows)

    max_iter = 100 * (p + m)
    for _ in range(max_iter):
        rows = np.array(sorted(working), dtype=int)
        target, mu_rows = _solve_working_set(j, z, r, c, rows)
        d = target - x
        step_norm = float(np.max(np.abs(d), initial=0.0))

        if step_norm <= 1e-13 * (1.0 + float(np.max(np.abs(x), initial=0.0))):
            # At the working-set minimizer: check inequality multiplier signs.
            ineq_local = [k for k, row in enumerate(rows) if row not in eq_rows]
            if not ineq_local:
                return _finalize(target, mu_rows, rows, problem, constraints)
            local_mu = mu_rows[ineq_local]
            worst = int(np.argmin(local_mu))
            if local_mu[worst] >= -_DUAL_TOL:
                return _finalize(target, mu_rows, rows, problem, constraints)
            working.remove(int(rows[ineq_local[worst]]))
            continue

        # Step toward the working-set minimizer, stopping at the first
        # blocking constraint (lowest index wins ties).
        alpha = 1.0
        blocker = -1
        rd = r @ d
        slack = c + r @ x
        for row in range(p):
            if row in working or rd[row] >= -1e-14:
                continue
            ratio = -slack[row] / rd[row]
            if ratio < alpha - 1e-14:
                alpha = max(ratio, 0.0)
                blocker = row
        x = x + alpha * d
        if blocker >= 0:
            working.append(blocker)
        # alpha == 1 with no blocker: loop re-solves and hits the
        # multiplier check branch next iteration.

    raise NumericalError(f"active-set iteration cap {max_iter} exceeded")


def brute_force_qp(problem: QuadraticProblem,
                   constraints: LinearConstraints) -> KTSolution:
    """Enumerate all binding patterns and return the feasible minimum.

    For every subset of inequality rows (equality rows always included) the
    equality-constrained minimizer has a closed form; among the candidates
    that satisfy all constraints the smallest objective is the global
    solution.  Intended as an independent oracle for :func:`solve_qp`.
    """
    ineq = constraints.inequality_rows
    if ineq.size > _BRUTE_CAP:
        raise CapacityError(f"brute force capped at {_BRUTE_CAP} inequality rows")
    j = problem.curvature
    z = problem.center
    r = constraints.jacobian
    c = constraints.intercept
    eq = constraints.equality_rows
    feas_tol = _activity_tol(c) + 1e-9

    best = None
    best_obj = np.inf
    best_rows = None
    best_mu = None
    for mask in range(1 << ineq.size):
        subset = ineq[[k for k in range(ineq.size) if (mask >> k) & 1]]
        rows = np.sort(np.concatenate([eq, subset])).astype(int)
        try:
            x, mu_rows = _solve_working_set(j, z, r, c, rows)
        except NumericalError:
            continue
        resid = c + r @ x
        if np.any(resid[~constraints.equality_mask] < -feas_tol[~constraints.equality_mask]):
            continue
        d = x - z
        obj = 0.5 * float(d @ j @ d)
        if obj < best_obj - 1e-12:
            best, best_obj, best_rows, best_mu = x, obj, rows, mu_rows
    if best is None:
        raise NumericalError("no feasible binding pattern found")
    return _finalize(best, best_mu, best_rows, problem, constraints)


class _BatchWorkspace:
    """Shared factorizations for checking one binding pattern on many centers."""

    def __init__(self, j: np.ndarray, constraints: LinearConstraints):
        self.j = j
        self.jinv = np.linalg.inv(j)
        self.r = constraints.jacobian
        self.c = constraints.intercept
        self.eq = constraints.equality_rows
        self.ineq = constraints.inequality_rows
        self.ineq_mask = ~constraints.equality_mask
        self.feas_tol = _activity_tol(self.c) + 1e-9
        self._cache: dict[int, tuple] = {}

    def pattern_rows(self, mask: int) -> np.ndarray:
        subset = self.ineq[[k for k in range(self.ineq.size) if (mask >> k) & 1]]
        return np.sort(np.concatenate([self.eq, subset])).astype(int)

    def _operators(self, mask: int):
        ops = self._cache.get(mask)
        if ops is None:
            rows = self.pattern_rows(mask)
            if rows.size == 0:
                ops = (rows, None, None, None)
            else:
                rw = self.r[rows]
                jinv_rt = self.jinv @ rw.T
                gram_inv = np.linalg.inv(rw @ jinv_rt)
                ops = (rows, rw, jinv_rt, gram_inv)
            self._cache[mask] = ops
        return ops

    def try_pattern(self, mask: int, z: np.ndarray):
        """Candidate minimizers for one pattern plus primal/dual acceptance."""
        rows, rw, jinv_rt, gram_inv = self._operators(mask)
        if rows.size == 0:
            cand = z
            mu = np.zeros((z.shape[0], 0))
        else:
            a = z @ rw.T + self.c[rows]
            mu = -(a @ gram_inv.T)
            cand = z + mu @ jinv_rt.T
        resid = cand @ self.r.T + self.c
        primal_ok = np.all(resid[:, self.ineq_mask] >= -self.feas_tol[self.ineq_mask],
                           axis=1)
        if rows.size:
            ineq_local = np.isin(rows, self.ineq, assume_unique=False)
            dual_ok = np.all(mu[:, ineq_local] >= -1e-9, axis=1)
        else:
            dual_ok = np.ones(z.shape[0], dtype=bool)
        return cand, primal_ok & dual_ok, primal_ok


def solve_qp_batch(curvature, constraints: LinearConstraints,
                   centers) -> tuple[np.ndarray, np.ndarray]:
    """Solve the same constraint system for many centers at once.

    For each center the violated-rows sign pattern is tried first (it is the
    solution's binding pattern for the bulk of draws); leftovers fall back to
    full pattern enumeration (capped at 12 inequality rows), and tolerance
    corner cases resolve to the feasible minimum-objective candidate.

    Returns
    -------
    lambdas : ndarray, shape (N, m)
        Minimizers.
    pattern_ids : ndarray of int, shape (N,)
        Bitmask over inequality rows (bit k set = inequality row k binding),
        taken from the accepted candidate's working set.
    """
    j = check_spd(curvature, "curvature")
    z = np.asarray(centers, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != j.shape[0]:
        raise ShapeError(f"centers must be (N, {j.shape[0]})")
    ineq = constraints.inequality_rows
    if ineq.size > 12:
        raise CapacityError("batch enumeration capped at 12 inequality rows")
    ws = _BatchWorkspace(j, constraints)
    n = z.shape[0]

    lambdas = np.empty_like(z)
    pattern_ids = np.full(n, -1, dtype=np.int64)
    unresolved = np.ones(n, dtype=bool)

    # Hypothesis pass: each draw's violated inequality rows as its pattern.
    resid0 = z @ constraints.jacobian.T + constraints.intercept
    weights = (1 << np.arange(ineq.size)).astype(np.int64)
    hypo = (resid0[:, ineq] < 0.0) @ weights
    for mask in np.unique(hypo):
        mask = int(mask)
        sel = np.flatnonzero(hypo == mask)
        cand, accept, _ = ws.try_pattern(mask, z[sel])
        hit = sel[accept]
        lambdas[hit] = cand[accept]
        pattern_ids[hit] = mask
        unresolved[hit] = False

    if np.any(unresolved):
        rest = np.flatnonzero(unresolved)
        for mask in range(1 << ineq.size):
            if rest.size == 0:
                break
            cand, accept, _ = ws.try_pattern(mask, z[rest])
            if np.any(accept):
                hit = rest[accept]
                lambdas[hit] = cand[accept]
                pattern_ids[hit] = mask
                rest = rest[~accept]
        for i in rest:
            # Tolerance corner cases: resolve exactly one at a time.
            sol = solve_qp(QuadraticProblem(j, z[i]), constraints)
            lambdas[i] = sol.lam
            mask = 0
            for k, row in enumerate(ineq):
                if row in sol.active:
                    mask |= 1 << k
            pattern_ids[i] = mask
    return lambdas, pattern_ids


def kt_residuals(sol: KTSolution, problem: QuadraticProblem,
                 constraints: LinearConstraints) -> KTResiduals:
    """Sup-norm residuals of the four Kuhn-Tucker blocks.

    stationarity  |J(x - z) - R'mu|_inf
    feasibility   violation of c + Rx >= 0 (inequality) / = 0 (equality)
    slackness     max_j |mu_j (c_j + R_j x)| over inequality rows
    dual          max(0, -min mu_j) over inequality rows
    """
    j = problem.curvature
    z = problem.center
    r = constraints.jacobian
    c = constraints.intercept
    x = np.asarray(sol.lam, dtype=np.float64)
    mu = np.asarray(sol.mu, dtype=np.float64)
    eq = constraints.equality_mask

    stat = float(np.max(np.abs(j @ (x - z) - r.T @ mu), initial=0.0))
    resid = c + r @ x
    feas_ineq = float(np.max(-resid[~eq], initial=0.0))
    feas_eq = float(np.max(np.abs(resid[eq]), initial=0.0))
    slack = float(np.max(np.abs(mu[~eq] * resid[~eq]), initial=0.0))
    dual = float(np.max(-mu[~eq], initial=0.0))
    return KTResiduals(stat, max(0.0, feas_ineq, feas_eq), slack, max(0.0, dual))
