"""Command-line front end: config parsing, dispatch, CSV/JSON emission.

All state flows through argv and the configuration document (environment
overrides are deliberately unsupported), so identical invocations produce
byte-identical outputs.  Exit codes: 0 on success, 2 when an assertion-style
experiment fails its gate, 1 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .bootstrap import build_ensemble, confidence_region, default_weight_law, make_weight_law
from .experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    ResultTable,
    build_oracle,
    build_problem,
    build_schedule,
    default_config,
    run_experiment,
)
from .linearization import theoretical_constants
from .rng import derive_key
from .schedule import validate_basic, validate_bootstrap
from .sgd import run_sgd, trace_to_csv

__all__ = ["main", "dispatch", "emit", "CliError"]

DEFAULT_SEED = 42  # fixed documented default for every subcommand


class CliError(Exception):
    """Usage or configuration error; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D102 - argparse hook
        raise CliError(message)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok)


# dotted configuration keys -> (ExperimentConfig field, parser)
CONFIG_KEYS = {
    "problem.kind": ("problem_kind", str),
    "problem.eigs": ("eigs", _parse_floats),
    "problem.theta_star": ("theta_star", float),
    "problem.beta_radius": ("beta_radius", float),
    "problem.dim": ("dim", int),
    "problem.ridge": ("ridge", float),
    "problem.n_atoms": ("n_atoms", int),
    "problem.design_radius": ("design_radius", float),
    "problem.design_seed": ("design_seed", int),
    "noise.scale": ("noise_scale", float),
    "noise.mult_scale": ("mult_scale", float),
    "schedule.c0": ("c0", float),
    "schedule.k0": ("k0", float),
    "schedule.gamma": ("gamma", float),
    "run.n": ("n", int),
    "run.theta0_offset": ("theta0_offset", float),
    "run.replications": ("replications", int),
    "run.checkpoints": ("checkpoints", _parse_ints),
    "bootstrap.m": ("bootstrap_m", int),
    "bootstrap.level": ("level", float),
    "grid.n": ("n_grid", _parse_ints),
    "grid.gamma": ("gamma_grid", _parse_floats),
    "est.directions": ("proxy_directions", int),
    "est.threshold": ("proxy_threshold", float),
    "est.coverage_band": ("coverage_band", float),
    "est.slope_bounds": ("slope_bounds", _parse_floats),
    "seed": ("master_seed", int),
    "threads": ("threads", int),
}

# keys accepted by validate/constants/sgd-run/bootstrap-ci but outside
# ExperimentConfig
EXTRA_KEYS = {
    "weights.alpha_shape": float,
    "weights.beta_shape": float,
}


def parse_config_document(path: str) -> dict[str, str]:
    """Flat key=value document with dotted keys; '#' starts a comment."""
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
    return pairs


def apply_config(
    cfg: ExperimentConfig, pairs: dict[str, str]
) -> tuple[ExperimentConfig, dict[str, float]]:
    """Apply dotted key/value pairs; unknown keys are a hard error."""
    updates = {}
    extras: dict[str, float] = {}
    for key, raw in pairs.items():
        if key in CONFIG_KEYS:
            field, parser = CONFIG_KEYS[key]
            try:
                updates[field] = parser(raw)
            except ValueError as err:
                raise CliError(f"bad value for {key}: {raw!r} ({err})") from err
        elif key in EXTRA_KEYS:
            extras[key] = EXTRA_KEYS[key](raw)
        else:
            raise CliError(f"unknown configuration key: {key!r}")
    return replace(cfg, **updates), extras


def _collect_pairs(args) -> dict[str, str]:
    pairs: dict[str, str] = {}
    if args.config:
        pairs.update(parse_config_document(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()  # inline overrides win
    return pairs


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _fmt_cell(value) -> str:
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def table_to_csv_bytes(table: ResultTable) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf)  # RFC-4180: CRLF rows, minimal quoting
    names = list(table.columns)
    writer.writerow(names)
    for i in range(table.n_rows):
        writer.writerow([_fmt_cell(table.columns[name][i]) for name in names])
    return buf.getvalue().encode()


def _json_default(value):
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def summary_dict(table: ResultTable) -> dict:
    meta = {k: v for k, v in table.metadata.items() if k != "runtime_s"}
    return meta


def table_to_json_bytes(table: ResultTable) -> bytes:
    obj = dict(summary_dict(table))
    obj["rows"] = table.rows()
    return (json.dumps(obj, default=_json_default) + "\n").encode()


def emit(table: ResultTable, out: str | None, fmt: str) -> None:
    """Write the table to ``out`` (or stdout) as CSV or JSON."""
    data = table_to_csv_bytes(table) if fmt == "csv" else table_to_json_bytes(table)
    if out is None or out == "-":
        sys.stdout.write(data.decode())
        return
    try:
        with open(out, "wb") as fh:
            fh.write(data)
    except OSError as err:
        raise CliError(f"cannot write {out!r}: {err}") from err


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_EXPERIMENT_COLUMNS = {
    "lower_bound": "gamma,n,sigma2,statistic",
    "sigma_scan": "gamma,n,frob_norm,spectral_norm,scaled,bound,ok",
    "coverage": "replication,covered_ball,covered_box,diverged",
    "clt_sanity": "estimator,value,n,replications",
    "rate_fit": "gamma,n,sigma2,ks_sigma_n,ks_sigma_inf,usable_sigma_n,usable_sigma_inf",
    "moment_check": "k,empirical,bound,ok",
    "concentration_check": "draw,deviation,violated",
    "identity_check": (
        "instance,d,n,residual_sum,residual_single_max,identity_ok,"
        "q_lmax_over_cq,q_lmin_over_cqmin,sigma_lmin_times_csigma_sq,envelope_ok"
    ),
}


def _experiment_config_from_args(experiment: str, args) -> ExperimentConfig:
    cfg = default_config(experiment)
    pairs = _collect_pairs(args)
    cfg, extras = apply_config(cfg, pairs)
    if extras:
        raise CliError(f"keys {sorted(extras)} are not valid for {experiment}")
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    if getattr(args, "gamma", None):
        cfg = replace(cfg, gamma_grid=_parse_floats(args.gamma))
    if getattr(args, "n_max", None):
        lo = min(cfg.n_grid) if cfg.n_grid else 1024
        lo_exp = max(1, int(math.log2(lo)))
        hi_exp = int(math.log2(args.n_max))
        cfg = replace(cfg, n_grid=tuple(2**e for e in range(lo_exp, hi_exp + 1)))
    if getattr(args, "n", None):
        cfg = replace(cfg, n=args.n)
    if getattr(args, "replications", None):
        cfg = replace(cfg, replications=args.replications)
    if getattr(args, "m", None):
        cfg = replace(cfg, bootstrap_m=args.m)
    if getattr(args, "level", None):
        cfg = replace(cfg, level=args.level)
    return cfg


def _run_experiment_cmd(experiment: str, args) -> int:
    cfg = _experiment_config_from_args(experiment, args)
    table = run_experiment(cfg)
    emit(table, args.out, args.format)
    summary = json.dumps(summary_dict(table), default=_json_default)
    if args.out and args.out != "-":
        sys.stdout.write(summary + "\n")
    else:
        sys.stderr.write(summary + "\n")
    passed = table.metadata.get("pass")
    return 0 if passed is not False else 2


def _cmd_sgd_run(args) -> int:
    cfg = _experiment_config_from_args("clt_sanity", args)
    problem = build_problem(cfg)
    oracle = build_oracle(cfg, problem)
    schedule = build_schedule(cfg)
    theta0 = problem.minimizer + cfg.theta0_offset / math.sqrt(problem.dim)
    data_key = derive_key(cfg.master_seed, "data", 0)
    run = run_sgd(problem, oracle, schedule, cfg.n, theta0, data_key, trace=args.trace)
    if args.trace:
        if not args.out:
            raise CliError("--trace requires --out for the trace CSV")
        with open(args.out, "wb") as fh:
            fh.write(trace_to_csv(run))
    summary = {
        "n": run.n,
        "theta_bar": run.theta_bar.tolist(),
        "theta_last": run.theta_last.tolist(),
        "theta0": run.theta0.tolist(),
        "seed": cfg.master_seed,
    }
    sys.stdout.write(json.dumps(summary, default=_json_default) + "\n")
    return 0


def _cmd_bootstrap_ci(args) -> int:
    cfg = _experiment_config_from_args("coverage", args)
    problem = build_problem(cfg)
    oracle = build_oracle(cfg, problem)
    schedule = build_schedule(cfg)
    theta0 = problem.minimizer + cfg.theta0_offset / math.sqrt(problem.dim)
    data_key = derive_key(cfg.master_seed, "data", 0)
    law = default_weight_law()
    ensemble = build_ensemble(
        problem,
        oracle,
        schedule,
        cfg.n,
        theta0,
        data_key,
        law,
        cfg.bootstrap_m,
        weight_seed=derive_key(cfg.master_seed, "weights", 0),
    )
    shape = {"ball": "norm_ball", "box": "coordinate_box"}[args.shape]
    region = confidence_region(ensemble, shape, cfg.level)
    if args.out:
        buf = io.StringIO()
        writer = csv.writer(buf)
        d = problem.dim
        writer.writerow(["replicate"] + [f"root{j}" for j in range(d)])
        for j in range(ensemble.m):
            writer.writerow([j] + [repr(float(v)) for v in ensemble.roots[j]])
        with open(args.out, "wb") as fh:
            fh.write(buf.getvalue().encode())
    sys.stdout.write(json.dumps(region.as_record(), default=_json_default) + "\n")
    return 0


def _cmd_constants(args) -> int:
    cfg = _experiment_config_from_args("clt_sanity", args)
    problem = build_problem(cfg)
    oracle = build_oracle(cfg, problem)
    schedule = build_schedule(cfg)
    theta0 = problem.minimizer + cfg.theta0_offset / math.sqrt(problem.dim)
    consts = theoretical_constants(problem, oracle, schedule, cfg.n, theta0=theta0)
    if args.sigma_n_out or args.sigma_infty_out:
        from .linearization import compute_covariances, compute_q_family, covariance_csv_bytes
        from .model import hessian_at_min

        qf = compute_q_family(hessian_at_min(problem), schedule, cfg.n)
        covs = compute_covariances(qf, oracle.sigma_xi, problem, oracle, theta0=theta0)
        if args.sigma_n_out:
            with open(args.sigma_n_out, "wb") as fh:
                fh.write(covariance_csv_bytes(covs.sigma_n))
        if args.sigma_infty_out:
            with open(args.sigma_infty_out, "wb") as fh:
                fh.write(covariance_csv_bytes(covs.sigma_infty))
    sys.stdout.write(json.dumps(consts.as_dict(), default=_json_default) + "\n")
    return 0


def _cmd_validate(args) -> int:
    cfg = default_config("coverage")
    pairs = _collect_pairs(args)
    cfg, extras = apply_config(cfg, pairs)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    problem = build_problem(cfg)
    oracle = build_oracle(cfg, problem)
    schedule = build_schedule(cfg)
    alpha_shape = extras.get("weights.alpha_shape", 0.5)
    beta_shape = extras.get("weights.beta_shape", 2.0)
    law = make_weight_law(alpha_shape, beta_shape)
    basic = validate_basic(schedule, problem.l1)
    boot = validate_bootstrap(schedule, problem.mu, problem.l1, oracle.l2, law.wmin, law.wmax)
    report = {
        "basic": [
            {"check": name, "pass": ok, "detail": detail} for name, ok, detail in basic.checks
        ],
        "bootstrap": [
            {"check": name, "pass": ok, "detail": detail} for name, ok, detail in boot.checks
        ],
        "min_admissible_k0": boot.min_k0,
        "pass": basic.passed and boot.passed,
    }
    sys.stdout.write(json.dumps(report, default=_json_default) + "\n")
    return 0 if report["pass"] else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="sgdboot", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add_common(p, grids=False, sizes=False):
        p.add_argument("--config", help="path to a key=value configuration document")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="inline configuration override (wins over --config)",
        )
        p.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")
        p.add_argument("--out", help="output path ('-' for stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, default=None, help="worker processes (default: machine parallelism)")
        if grids:
            p.add_argument("--gamma", help="comma-separated gamma grid")
            p.add_argument("--n-max", type=int, dest="n_max", help="extend the dyadic n grid up to this value")
        if sizes:
            p.add_argument("--n", type=int, help="horizon n")
            p.add_argument("--replications", "-r", type=int, help="number of replications")
            p.add_argument("--m", type=int, help="bootstrap replicates per ensemble")
            p.add_argument("--level", type=float, help="confidence level")

    for experiment in EXPERIMENTS:
        p = sub.add_parser(
            experiment.replace("_", "-"),
            help=f"run the {experiment} experiment",
            description=f"Output columns: {_EXPERIMENT_COLUMNS[experiment]}",
        )
        add_common(p, grids=experiment in ("lower_bound", "sigma_scan", "rate_fit"), sizes=True)
        p.set_defaults(func=lambda args, experiment=experiment: _run_experiment_cmd(experiment, args))

    p = sub.add_parser("sgd-run", help="single SGD run; optional trace CSV",
                       description="Trace columns: k,theta0..theta{d-1},alpha_k")
    add_common(p, sizes=True)
    p.add_argument("--trace", action="store_true", help="write the per-step trace CSV to --out")
    p.set_defaults(func=_cmd_sgd_run)

    p = sub.add_parser("bootstrap-ci", help="bootstrap ensemble and confidence region",
                       description="Ensemble CSV columns: replicate,root0..root{d-1}; region as JSON on stdout")
    add_common(p, sizes=True)
    p.add_argument("--shape", choices=("ball", "box"), default="ball")
    p.set_defaults(func=_cmd_bootstrap_ci)

    p = sub.add_parser("constants", help="print the theoretical constants record")
    add_common(p, sizes=True)
    p.add_argument("--sigma-n-out", help="write Sigma_n as row-major CSV (header: d)")
    p.add_argument("--sigma-infty-out", help="write Sigma_inf as row-major CSV (header: d)")
    p.set_defaults(func=_cmd_constants)

    p = sub.add_parser("validate", help="run both step-size validators")
    add_common(p)
    p.set_defaults(func=_cmd_validate)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise CliError("a subcommand is required (see --help)")
        # precedence: --seed > config-document seed > the documented default 42
        # (the default is ExperimentConfig's master_seed, so leave None here)
        if getattr(args, "threads", None) is None and hasattr(args, "threads"):
            args.threads = os.cpu_count() or 1
        return args.func(args)
    except CliError as err:
        sys.stderr.write(f"error: {err}\n")
        return 1
    except (ValueError, FileNotFoundError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
