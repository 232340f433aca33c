"""Finite-sample Monte Carlo comparison of the five estimators.

Design: y_i = x_i' theta_0 + eps_i with equicorrelated Gaussian regressors
(unit variances, correlation 0.5) and standard normal errors.  The
coefficient vector splits into an inequality-constrained block
theta_1 = (1, 1, 1, b, ..., b) of length k1 and an equality-constrained
block theta_2 = (c, ..., c) of length k2; estimators are fitted under
theta_1 >= 0 and theta_2 = 0.  Performance is mean squared error normalized
by the unrestricted estimator's MSE, with replication streams that are pure
functions of (seed, b, replication), so adding estimators never perturbs
the data draws.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _rng, __version__
from .comparators import EBConfig, eb_fit, james_stein
from .estimators import fit_restricted, fit_unrestricted, sign_and_zero_constraints
from .exceptions import IcseError, ShapeError, StudyError
from .model import EstimationProblem
from .shrinkage import OrthantConfig, fit_icse

__all__ = ["MCConfig", "MCRow", "MCResult", "generate_dgp", "run_study",
           "emit_tables", "ESTIMATOR_NAMES"]

ESTIMATOR_NAMES = ("unrestricted", "restricted", "james_stein", "eb", "icse")

_FAILURE_CAP = 1e-3
_CSV_HEADER = "b,estimator,raw_mse,normalized_mse,mc_se,n,k1,k2,c,replications,seed"


@dataclass(frozen=True)
class MCConfig:
    """Study design and execution settings.

    ``icse_orthant_draws`` and ``eb`` trade accuracy for speed inside the
    replication loop; ``eb_truncate_all`` switches the Empirical Bayes
    truncation from the inequality block only (default) to all coordinates.
    """

    n: int = 200
    k1: int = 5
    k2: int = 3
    b_grid: tuple[float, ...] = tuple(np.linspace(-0.5, 0.5, 21))
    c_equal: float = 0.0
    replications: int = 2000
    seed: int = 0
    estimators: tuple[str, ...] = ESTIMATOR_NAMES
    icse_orthant_draws: int = 20_000
    eb: EBConfig = field(default_factory=lambda: EBConfig(
        nu_grid=tuple(np.logspace(-4.0, 4.0, 21)), gibbs_burn=100,
        gibbs_draws=1024, chains=32, orthant_draws=4000))
    eb_truncate_all: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.k1 < 3:
            raise ShapeError("k1 must be at least 3 (theta_1 starts (1,1,1,b,...))")
        if self.k2 < 0:
            raise ShapeError("k2 must be nonnegative")
        if self.replications < 100:
            raise ShapeError("replications must be at least 100")
        if not self.b_grid:
            raise ShapeError("b_grid must be nonempty")
        unknown = set(self.estimators) - set(ESTIMATOR_NAMES)
        if unknown:
            raise ShapeError(f"unknown estimators: {sorted(unknown)}")
        if self.n <= self.k1 + self.k2:
            raise ShapeError("n must exceed k1 + k2")
        object.__setattr__(self, "b_grid", tuple(float(b) for b in self.b_grid))
        object.__setattr__(self, "estimators", tuple(self.estimators))

    @property
    def dim(self) -> int:
        return self.k1 + self.k2

    def theta0(self, b: float) -> np.ndarray:
        theta1 = np.concatenate([np.ones(3), np.full(self.k1 - 3, b)])
        theta2 = np.full(self.k2, self.c_equal)
        return np.concatenate([theta1, theta2])


@dataclass(frozen=True)
class MCRow:
    b: float
    estimator: str
    raw_mse: float
    normalized_mse: float
    mc_se: float


@dataclass(frozen=True)
class MCResult:
    config: MCConfig
    rows: tuple[MCRow, ...]
    failures: tuple[str, ...]
    elapsed: float


def _equicorr_cholesky(dim: int, rho: float = 0.5) -> np.ndarray:
    sigma = np.full((dim, dim), rho) + (1.0 - rho) * np.eye(dim)
    return np.linalg.cholesky(sigma)


def generate_dgp(cfg: MCConfig, b: float, rep: int) -> tuple[EstimationProblem, np.ndarray]:
    """One replication's data; bit-identical for identical (seed, b, rep)."""
    theta0 = cfg.theta0(b)
    gen = _rng.stream(cfg.seed, _rng.DOMAIN_DGP, _rng.float_key(b), rep, 0)
    chol = _equicorr_cholesky(cfg.dim)
    x = gen.standard_normal((cfg.n, cfg.dim)) @ chol.T
    eps = gen.standard_normal(cfg.n)
    y = x @ theta0 + eps
    return EstimationProblem(design=x, response=y), theta0


def _replication_losses(cfg: MCConfig, b: float, rep: int):
    """Squared-error losses of the selected estimators on one replication."""
    problem, theta0 = generate_dgp(cfg, b, rep)
    cons = sign_and_zero_constraints(cfg.k1, cfg.k2)
    losses: dict[str, float] = {}
    errors: list[str] = []

    fit = fit_unrestricted(problem)
    estimates: dict[str, np.ndarray] = {"unrestricted": fit.theta}

    if "restricted" in cfg.estimators or "icse" in cfg.estimators:
        try:
            restricted_fit, _ = fit_restricted(problem, cons)
            estimates["restricted"] = restricted_fit.theta
        except IcseError as exc:
            errors.append(f"b={b:g} rep={rep} restricted: {exc}")

    if "james_stein" in cfg.estimators:
        estimates["james_stein"] = james_stein(fit)

    if "icse" in cfg.estimators:
        try:
            seed = _rng.stream(cfg.seed, _rng.DOMAIN_DGP,
                               _rng.float_key(b), rep, 1).integers(1 << 62)
            orthant_cfg = OrthantConfig(draws=cfg.icse_orthant_draws,
                                        seed=int(seed))
            result = fit_icse(problem, cons, orthant_cfg=orthant_cfg)
            estimates["icse"] = result.combined
        except IcseError as exc:
            errors.append(f"b={b:g} rep={rep} icse: {exc}")

    if "eb" in cfg.estimators:
        try:
            seed = _rng.stream(cfg.seed, _rng.DOMAIN_DGP,
                               _rng.float_key(b), rep, 2).integers(1 << 62)
            eb_cfg = EBConfig(nu_grid=cfg.eb.nu_grid, gibbs_burn=cfg.eb.gibbs_burn,
                              gibbs_draws=cfg.eb.gibbs_draws, seed=int(seed),
                              chains=cfg.eb.chains,
                              orthant_draws=cfg.eb.orthant_draws)
            truncated = None if cfg.eb_truncate_all else range(cfg.k1)
            theta_eb, _, _ = eb_fit(problem, eb_cfg, truncated=truncated)
            estimates["eb"] = theta_eb
        except IcseError as exc:
            errors.append(f"b={b:g} rep={rep} eb: {exc}")

    for name in cfg.estimators:
        est = estimates.get(name)
        losses[name] = (float(np.sum((est - theta0) ** 2))
                        if est is not None else np.nan)
    return losses, errors


def _run_chunk(cfg: MCConfig, b_index: int, rep_start: int, rep_stop: int):
    b = cfg.b_grid[b_index]
    out = np.full((rep_stop - rep_start, len(cfg.estimators)), np.nan)
    errors: list[str] = []
    for rep in range(rep_start, rep_stop):
        losses, errs = _replication_losses(cfg, b, rep)
        errors.extend(errs)
        for k, name in enumerate(cfg.estimators):
            out[rep - rep_start, k] = losses[name]
    return b_index, rep_start, out, errors


def _normalized_rows(cfg: MCConfig, b: float, losses: np.ndarray) -> list[MCRow]:
    """Rows for one grid point from the (replications, estimators) loss array."""
    rows = []
    names = cfg.estimators
    if "unrestricted" in names:
        base = losses[:, names.index("unrestricted")]
    else:
        # Normalization always refers to the unrestricted estimator even when
        # it is not among the reported ones; losses are prepended upstream.
        raise StudyError("unrestricted estimator required for normalization")
    base_ok = np.isfinite(base)
    base_mse = float(np.mean(base[base_ok]))
    for k, name in enumerate(names):
        col = losses[:, k]
        ok = np.isfinite(col) & base_ok
        n_ok = int(ok.sum())
        raw = float(np.mean(col[ok]))
        ratio = raw / base_mse
        if name == "unrestricted":
            rows.append(MCRow(b=b, estimator=name, raw_mse=raw,
                              normalized_mse=1.0, mc_se=0.0))
            continue
        # Delta-method SE of the MSE ratio from paired replication losses.
        resid = col[ok] - ratio * base[ok]
        se = float(np.std(resid, ddof=1) / (np.sqrt(n_ok) * base_mse))
        rows.append(MCRow(b=b, estimator=name, raw_mse=raw,
                          normalized_mse=ratio, mc_se=se))
    return rows


def run_study(cfg: MCConfig) -> MCResult:
    """Run the full grid study; deterministic for fixed (config, seed).

    Replications run in ``cfg.workers`` processes, partitioned on fixed
    chunk boundaries and reduced in index order, so results are identical
    for any worker count.  A replication/estimator failure is recorded and
    excluded; more than 0.1% failures raise StudyError.
    """
    start_time = time.perf_counter()
    if not cfg.estimators:
        return MCResult(config=cfg, rows=(), failures=(),
                        elapsed=time.perf_counter() - start_time)
    if "unrestricted" not in cfg.estimators:
        cfg = MCConfig(**{**cfg.__dict__,
                          "estimators": ("unrestricted",) + cfg.estimators})
    reps = cfg.replications
    chunk = max(1, min(50, reps // max(cfg.workers * 4, 1)))
    tasks = [(bi, lo, min(lo + chunk, reps))
             for bi in range(len(cfg.b_grid))
             for lo in range(0, reps, chunk)]

    losses = {bi: np.full((reps, len(cfg.estimators)), np.nan)
              for bi in range(len(cfg.b_grid))}
    failures: list[str] = []

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_chunk, cfg, *task) for task in tasks]
            results = [f.result() for f in futures]
    else:
        results = [_run_chunk(cfg, *task) for task in tasks]

    for b_index, rep_start, block, errors in results:
        losses[b_index][rep_start:rep_start + block.shape[0]] = block
        failures.extend(errors)

    cells = reps * len(cfg.b_grid) * len(cfg.estimators)
    if len(failures) > _FAILURE_CAP * cells:
        raise StudyError(
            f"{len(failures)} replication failures out of {cells} cells")

    rows: list[MCRow] = []
    for bi, b in enumerate(cfg.b_grid):
        rows.extend(_normalized_rows(cfg, b, losses[bi]))
    elapsed = time.perf_counter() - start_time
    return MCResult(config=cfg, rows=tuple(rows), failures=tuple(failures),
                    elapsed=elapsed)


def _fmt(value: float) -> str:
    return format(value, ".10g")


def emit_tables(result: MCResult, path) -> None:
    """Write the study CSV: one row per (b, estimator), 10 significant digits."""
    cfg = result.config
    lines = [f"# icse-kit {__version__} seed={cfg.seed}", _CSV_HEADER]
    for row in result.rows:
        lines.append(",".join([
            _fmt(row.b), row.estimator, _fmt(row.raw_mse),
            _fmt(row.normalized_mse), _fmt(row.mc_se), str(cfg.n),
            str(cfg.k1), str(cfg.k2), _fmt(cfg.c_equal),
            str(cfg.replications), str(cfg.seed),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
