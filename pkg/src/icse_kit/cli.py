"""Batch command-line front end.

Subcommands: ``fit``, ``mc-study``, ``limit-sim``, ``orthant``, ``eb``.
Every run is configured by an INI file with one section per subcommand plus
optional flag overrides; unknown keys are rejected and every stochastic
command requires an explicit seed.  Outputs are byte-identical for identical
(config, flags), independent of ``--threads``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys

import numpy as np

from . import __version__
from .asymptotics import (
    LimitConfig,
    apply_tau,
    closed_form_2d,
    draw_limit,
    estimate_risk,
    optimal_tau,
    risk_bound,
    summarize_patterns,
)
from .comparators import EBConfig, eb_fit
from .estimators import linear_constraints, sign_restrictions
from .exceptions import ConfigError, DataError, IcseError, ShapeError
from .mc_study import ESTIMATOR_NAMES, MCConfig, emit_tables, run_study
from .model import LossSpec, build_linear_problem
from .orthant import OrthantQuery, region_probability
from .shrinkage import OrthantConfig, fit_icse

_KNOWN_KEYS = {
    "fit": {"data", "seed", "draws", "prune_below", "loss", "sign_restrictions",
            "constraints_file", "vhat", "out"},
    "mc-study": {"n", "k1", "k2", "c", "replications", "seed", "b_grid",
                 "estimators", "icse_draws", "eb_truncate_all", "out"},
    "limit-sim": {"dim", "j", "v", "w", "sign_restrictions", "r_file", "c",
                  "tau", "tau_grid", "draws", "seed", "zeta", "out"},
    "orthant": {"mean", "cov", "positive_set", "draws", "seed", "out"},
    "eb": {"data", "seed", "truncate", "gibbs_draws", "gibbs_burn", "chains",
           "orthant_draws", "out"},
}


def _fmt(value: float) -> str:
    return format(float(value), ".10g")


def _vector_str(values) -> str:
    return ";".join(_fmt(v) for v in np.asarray(values, dtype=float).ravel())


def _header(seed: int) -> str:
    return f"# icse-kit {__version__} seed={seed}"


def _load_section(path: str, section: str) -> dict[str, str]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if not parser.has_section(section):
        raise ConfigError(f"config file has no [{section}] section")
    values = dict(parser.items(section))
    unknown = set(values) - _KNOWN_KEYS[section]
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return values


def _merge_overrides(values: dict[str, str], args: argparse.Namespace,
                     section: str) -> dict[str, str]:
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in _KNOWN_KEYS[section]:
            raise ConfigError(f"unknown key for [{section}]: {key}")
        values[key] = val.strip()
    return values


def _require_seed(values: dict[str, str]) -> int:
    if "seed" not in values:
        raise ConfigError("seed is required")
    return _parse_int(values["seed"], "seed")


def _require(values: dict[str, str], key: str) -> str:
    if key not in values:
        raise ConfigError(f"missing required key: {key}")
    return values[key]


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {raw!r}") from exc


def _parse_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {raw!r}") from exc


def _parse_float_list(raw: str, key: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{key} must be a comma list of numbers") from exc


def _parse_grid(raw: str, key: str) -> list[float]:
    """Either ``min:max:points`` or a comma list."""
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError(f"{key} grid must be min:max:points")
        lo = _parse_float(parts[0], key)
        hi = _parse_float(parts[1], key)
        pts = _parse_int(parts[2], key)
        if pts < 1:
            raise ConfigError(f"{key} grid needs at least one point")
        return list(np.linspace(lo, hi, pts))
    return _parse_float_list(raw, key)


def _parse_range_1based(raw: str, key: str) -> list[int]:
    """``a..b`` (1-based, inclusive) or a comma list of 1-based indices."""
    raw = raw.strip()
    if ".." in raw:
        lo_s, _, hi_s = raw.partition("..")
        lo = _parse_int(lo_s, key)
        hi = _parse_int(hi_s, key)
        if lo < 1 or hi < lo:
            raise ConfigError(f"{key} range must satisfy 1 <= a <= b")
        return list(range(lo - 1, hi))
    return [_parse_int(tok, key) - 1 for tok in raw.split(",")]


def _read_data_csv(path: str):
    """Header row; first column response, remaining columns regressors."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open data file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path} line 1: need response plus regressors")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(tok.strip() == "" for tok in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path} line {lineno}: expected "
                                f"{len(header)} fields, got {len(row)}")
            try:
                rows.append([float(tok) for tok in row])
            except ValueError:
                raise DataError(f"{path} line {lineno}: non-numeric value") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    return data[:, 1:], data[:, 0]


def _read_matrix_csv(path: str) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot open matrix file {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed matrix file {path}: {exc}") from exc
    return data


def _read_constraints_csv(path: str, m: int):
    """Aux CSV schema: columns r_1..r_m, intercept, equality (0/1)."""
    data = _read_matrix_csv(path)
    if data.shape[1] != m + 2:
        raise DataError(f"{path}: expected {m + 2} columns (R, intercept, equality)")
    r = data[:, :m]
    intercept = data[:, m]
    mask = data[:, m + 1] != 0.0
    return linear_constraints(r, intercept=intercept, equality_mask=mask)


def _build_constraints(values: dict[str, str], m: int):
    if "sign_restrictions" in values and "constraints_file" in values:
        raise ConfigError("give either sign_restrictions or constraints_file")
    if "sign_restrictions" in values:
        coords = _parse_range_1based(values["sign_restrictions"], "sign_restrictions")
        if any(i < 0 or i >= m for i in coords):
            raise ConfigError("sign_restrictions index out of range")
        return sign_restrictions(m, coords)
    if "constraints_file" in values:
        return _read_constraints_csv(values["constraints_file"], m)
    raise ConfigError("constraint specification required "
                      "(sign_restrictions or constraints_file)")


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def format_fit_report(result, seed: int) -> list[str]:
    """Deterministic fit report lines (shared by the CLI and tests)."""
    fit = result.unrestricted
    lines = [_header(seed), "field,value"]
    lines.append(f"n,{fit.n}")
    lines.append(f"m,{fit.n_params}")
    lines.append(f"weight,{_fmt(result.weight)}")
    lines.append(f"tau_star,{_fmt(result.tau_star)}")
    lines.append(f"scaled_loss,{_fmt(result.scaled_loss)}")
    lines.append(f"theta_hat,{_vector_str(fit.theta)}")
    lines.append(f"theta_tilde,{_vector_str(result.restricted)}")
    lines.append(f"theta_star,{_vector_str(result.combined)}")
    lines.append(f"c_hat,{_vector_str(result.c_hat)}")
    lines.append("pattern_mask,indices,count,probability,prob_se,"
                 "expected_loss,a_trace,a_phimax,gamma")
    for stats in result.pattern_table:
        idx = "|".join(str(i + 1) for i in stats.pattern.indices)
        lines.append(",".join([
            str(stats.pattern.mask), idx or "-", str(stats.pattern.count),
            _fmt(stats.probability), _fmt(stats.prob_se),
            _fmt(stats.expected_loss), _fmt(stats.a_trace),
            _fmt(stats.a_phimax), _fmt(stats.gamma),
        ]))
    return lines


def _cmd_fit(values: dict[str, str]) -> None:
    seed = _require_seed(values)
    design, response = _read_data_csv(_require(values, "data"))
    problem = build_linear_problem(design, response)
    cons = _build_constraints(values, problem.n_params)
    loss_name = values.get("loss", "inverse_omega")
    if loss_name not in ("identity", "inverse_omega"):
        raise ConfigError(f"loss must be identity or inverse_omega, got {loss_name!r}")
    loss = LossSpec(rule=loss_name)
    orthant_cfg = OrthantConfig(
        draws=_parse_int(values.get("draws", "100000"), "draws"),
        seed=seed,
        prune_below=_parse_float(values.get("prune_below", "1e-4"), "prune_below"),
    )
    vhat = values.get("vhat", "robust")
    result = fit_icse(problem, cons, loss=loss, orthant_cfg=orthant_cfg,
                      vhat_mode=vhat)
    _write_lines(_require(values, "out"), format_fit_report(result, seed))


def _cmd_mc_study(values: dict[str, str], threads: int) -> None:
    seed = _require_seed(values)
    names = tuple(tok.strip() for tok in
                  values.get("estimators", ",".join(ESTIMATOR_NAMES)).split(",")
                  if tok.strip())
    cfg = MCConfig(
        n=_parse_int(values.get("n", "200"), "n"),
        k1=_parse_int(values.get("k1", "5"), "k1"),
        k2=_parse_int(values.get("k2", "3"), "k2"),
        b_grid=tuple(_parse_grid(values.get("b_grid", "-0.5:0.5:21"), "b_grid")),
        c_equal=_parse_float(values.get("c", "0"), "c"),
        replications=_parse_int(values.get("replications", "2000"), "replications"),
        seed=seed,
        estimators=names,
        icse_orthant_draws=_parse_int(values.get("icse_draws", "20000"), "icse_draws"),
        eb_truncate_all=values.get("eb_truncate_all", "false").lower() == "true",
        workers=threads,
    )
    result = run_study(cfg)
    emit_tables(result, _require(values, "out"))


def _limit_matrix(values: dict[str, str], key: str, dim: int) -> np.ndarray:
    raw = values.get(key, "identity")
    if raw == "identity":
        return np.eye(dim)
    mat = _read_matrix_csv(raw)
    if mat.shape != (dim, dim):
        raise DataError(f"{key} matrix must be {dim}x{dim}, got {mat.shape}")
    return mat


def _cmd_limit_sim(values: dict[str, str]) -> None:
    seed = _require_seed(values)
    dim = _parse_int(_require(values, "dim"), "dim")
    j = _limit_matrix(values, "j", dim)
    v = _limit_matrix(values, "v", dim)
    if "sign_restrictions" in values:
        coords = _parse_range_1based(values["sign_restrictions"], "sign_restrictions")
        r = np.zeros((len(coords), dim))
        for row, i in enumerate(coords):
            if i < 0 or i >= dim:
                raise ConfigError("sign_restrictions index out of range")
            r[row, i] = 1.0
    elif "r_file" in values:
        r = _read_matrix_csv(values["r_file"])
        if r.shape[1] != dim:
            raise DataError(f"r_file must have {dim} columns")
    else:
        raise ConfigError("constraint specification required "
                          "(sign_restrictions or r_file)")
    c = np.asarray(_parse_float_list(_require(values, "c"), "c"))
    if c.shape[0] != r.shape[0]:
        raise ConfigError("localizer c length must match constraint rows")
    jinv = np.linalg.inv(j)
    omega = jinv @ v @ jinv
    w_name = values.get("w", "inverse_omega")
    if w_name == "inverse_omega":
        w = np.linalg.inv(omega)
        w = 0.5 * (w + w.T)
    elif w_name == "identity":
        w = np.eye(dim)
    else:
        w = _read_matrix_csv(w_name)

    cfg = LimitConfig(j=j, v=v, r=r, localizer=c, w=w, tau=0.0,
                      draws=_parse_int(values.get("draws", "100000"), "draws"),
                      seed=seed,
                      zeta=_parse_float(values.get("zeta", "1e6"), "zeta"))
    draws = draw_limit(cfg)
    stats = summarize_patterns(draws, cfg)
    tau_raw = values.get("tau", "optimal")
    tau = optimal_tau(stats) if tau_raw == "optimal" else _parse_float(tau_raw, "tau")
    tau = max(tau, 0.0)
    at_tau = apply_tau(draws, tau)
    risk, risk_se, trimmed = estimate_risk(at_tau, cfg.w, cfg.zeta)
    base = float(np.trace(cfg.w @ cfg.omega))

    loss_z = np.einsum("ni,ij,nj->n", draws.z, cfg.w, draws.z)
    loss_star = np.einsum("ni,ij,nj->n", at_tau.psi_star, cfg.w, at_tau.psi_star)
    diff = loss_z - loss_star
    reduction = float(diff.mean())
    reduction_se = float(diff.std(ddof=1) / np.sqrt(diff.shape[0]))
    verdict = "PASS" if reduction > 3.0 * reduction_se else "FAIL"

    lines = [_header(seed), "record,key,value,extra"]
    n = cfg.draws
    counts = np.bincount(draws.pattern_id,
                         minlength=1 << cfg.constraints.inequality_rows.size)
    for mask, count in enumerate(counts):
        if count == 0:
            continue
        freq = count / n
        se = np.sqrt(freq * (1 - freq) / n)
        lines.append(f"pattern_freq,{mask},{_fmt(freq)},{_fmt(se)}")
        sel = draws.pattern_id == mask
        mean = draws.lambda_tilde[sel].mean(axis=0)
        lines.append(f"pattern_mean,{mask},{_vector_str(mean)},")
    lines.append(f"risk,estimate,{_fmt(risk)},{_fmt(risk_se)}")
    lines.append(f"risk,trimmed,{_fmt(trimmed)},")
    lines.append(f"risk,unrestricted_reference,{_fmt(base)},")
    if "tau_grid" in values:
        for tau_point in _parse_grid(values["tau_grid"], "tau_grid"):
            bound = risk_bound(max(tau_point, 0.0), stats, cfg.w, cfg.omega)
            lines.append(f"bound,{_fmt(tau_point)},{_fmt(bound)},")
    lines.append(f"dominance,tau,{_fmt(tau)},")
    lines.append(f"dominance,reduction,{_fmt(reduction)},{_fmt(reduction_se)}")
    lines.append(f"dominance,verdict,{verdict},")
    if dim == 2 and r.shape == (2, 2) and np.allclose(r, np.eye(2)):
        for entry in closed_form_2d(j, v, c):
            mean_str = "-" if entry.mean is None else _vector_str(entry.mean)
            lines.append(f"closed_form,{entry.pattern_id},"
                         f"{_fmt(entry.probability)},{mean_str}")
    _write_lines(_require(values, "out"), lines)


def _cmd_orthant(values: dict[str, str]) -> None:
    seed = _require_seed(values)
    mean = np.asarray(_parse_float_list(_require(values, "mean"), "mean"))
    dim = mean.shape[0]
    cov_raw = values.get("cov", "identity")
    cov = np.eye(dim) if cov_raw == "identity" else _read_matrix_csv(cov_raw)
    positive = _parse_range_1based(_require(values, "positive_set"), "positive_set")
    query = OrthantQuery(mean=mean, covariance=cov,
                         positive_set=tuple(positive),
                         draws=_parse_int(values.get("draws", "100000"), "draws"),
                         seed=seed)
    est, se = region_probability(query)
    lines = [_header(seed), "field,value",
             f"estimate,{_fmt(est)}", f"std_error,{_fmt(se)}"]
    _write_lines(_require(values, "out"), lines)


def _cmd_eb(values: dict[str, str]) -> None:
    seed = _require_seed(values)
    design, response = _read_data_csv(_require(values, "data"))
    problem = build_linear_problem(design, response)
    cfg = EBConfig(
        gibbs_burn=_parse_int(values.get("gibbs_burn", "1000"), "gibbs_burn"),
        gibbs_draws=_parse_int(values.get("gibbs_draws", "10000"), "gibbs_draws"),
        seed=seed,
        chains=_parse_int(values.get("chains", "1"), "chains"),
        orthant_draws=_parse_int(values.get("orthant_draws", "20000"),
                                 "orthant_draws"),
    )
    truncate = values.get("truncate", "all")
    truncated = None if truncate == "all" else _parse_range_1based(truncate, "truncate")
    theta, nu_hat, posterior = eb_fit(problem, cfg, truncated=truncated)
    lines = [_header(seed), "field,value",
             f"nu_hat,{_fmt(nu_hat)}",
             f"d_const,{_fmt(posterior.d_const)}",
             f"theta_eb,{_vector_str(theta)}",
             f"theta_bar,{_vector_str(posterior.theta_bar)}"]
    _write_lines(_require(values, "out"), lines)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icse-kit",
        description="Inequality constrained shrinkage estimation toolkit.")
    parser.add_argument("--version", action="version",
                        version=f"icse-kit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("fit", "fit the shrinkage estimator on a data CSV"),
        ("mc-study", "run the finite-sample Monte Carlo comparison"),
        ("limit-sim", "simulate the limit law and risk bound"),
        ("orthant", "estimate a normal sign-region probability"),
        ("eb", "fit the Empirical Bayes comparator"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="INI config file")
        cmd.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
        cmd.add_argument("--threads", type=int, default=1,
                         help="worker count; outputs do not depend on it")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        values = _load_section(args.config, args.command)
        values = _merge_overrides(values, args, args.command)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        if args.command == "fit":
            _cmd_fit(values)
        elif args.command == "mc-study":
            _cmd_mc_study(values, args.threads)
        elif args.command == "limit-sim":
            _cmd_limit_sim(values)
        elif args.command == "orthant":
            _cmd_orthant(values)
        elif args.command == "eb":
            _cmd_eb(values)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except IcseError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
