"""Command-line interface: ``gqnet fit | tune | simulate | kkt | normality``.

Exit codes: 0 success, 1 input error, 2 fit did not converge, 3 KKT check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from io import StringIO
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    FitResult,
    GroupedCoefficients,
    PenaltyConfig,
    active_set,
    objective_penalized,
    objective_quantile,
)
from .io import (
    InputError,
    fmt,
    read_coefficients,
    read_dataset,
    read_grid_pairs,
    read_scenario_file,
    write_coefficients,
)
from .pilot import PilotConvergenceError, PilotOptions, adaptive_weights, fit_pilot
from .simulation import (
    PRESETS,
    ErrorLaw,
    SimulationScenario,
    aggregate,
    normality_diagnostic,
    preset_beta,
    run_scenario,
)
from .solver import SolverOptions, UnsupportedConfiguration, fit_enet, kkt_check
from .tuning import (
    DEFAULT_CONSTANTS,
    UNGROUPED_GAMMA,
    TuningGrid,
    best_record,
    compute_Sn,
    default_grid,
    estimate_tau,
    grid_search,
    grouped_gamma,
)

log = logging.getLogger("gqnet")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_KKT = 0, 1, 2, 3
SEED_ENV = "GQNET_SEED"


class CliError(Exception):
    """Operational problem reported with exit code 1."""


def _positive(text):
    v = float(text)
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a finite nonnegative number, got {text!r}")
    return v


def _tau_arg(text):
    if text == "auto":
        return text
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("tau must lie in (0, 1) or be 'auto'")
    return v


def _sweep_arg(text):
    mode = text.replace("-", "_")
    if mode not in ("jacobi", "gauss_seidel"):
        raise argparse.ArgumentTypeError("sweep must be jacobi or gauss-seidel")
    return mode


def _log_config(command, **config):
    log.info("gqnet %s %s", __version__, command)
    log.info("config %s", json.dumps(config, sort_keys=True, default=str))


def _resolve_tau(arg, y):
    if arg == "auto":
        tau = estimate_tau(y)
        log.info("estimated tau = %s", fmt(tau))
        return tau
    return float(arg)


def _default_gamma(n, g, p):
    if p == 1 or g == 1 or g >= n:
        return UNGROUPED_GAMMA
    return grouped_gamma(n, g)


def _pilot(ds, tau, method):
    return fit_pilot(ds.design, ds.y, tau, PilotOptions(method=method))


def _emit(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _coef_text(fit, ds, meta):
    buf = StringIO()
    write_coefficients(buf, fit, ds, meta)
    return buf.getvalue()


def cmd_fit(args) -> int:
    ds = read_dataset(args.dataset)
    d = ds.design
    tau = _resolve_tau(args.tau, ds.y)
    gamma = args.gamma if args.gamma is not None else _default_gamma(d.n, d.g, d.p)
    if not args.lambda2 > 0:
        raise UnsupportedConfiguration(
            "lambda2 must be positive: the closed-form group update divides by 2*lambda2 "
            "(lambda2 = 0 is an unsupported configuration)"
        )
    _log_config("fit", dataset=args.dataset, n=d.n, g=d.g, p=d.p, tau=tau, lambda1=args.lambda1,
                lambda2=args.lambda2, gamma=gamma, epsilon=args.epsilon, max_iters=args.max_iters,
                sweep=args.sweep, pilot=args.pilot)
    pilot = _pilot(ds, tau, args.pilot)
    weights = adaptive_weights(pilot, gamma)
    config = PenaltyConfig(tau, args.lambda1, args.lambda2, gamma, weights)
    fit = fit_enet(d, ds.y, config, pilot, SolverOptions(args.epsilon, args.max_iters, args.sweep))
    report = kkt_check(d, ds.y, fit, config)
    meta = {"version": __version__, "tau": tau, "lambda1": args.lambda1, "lambda2": args.lambda2,
            "gamma": gamma, "kkt_passed": str(report.passed).lower()}
    _emit(args.out, _coef_text(fit, ds, meta))
    log.info("status=%s iterations=%d active=%s kkt_passed=%s",
             fit.status, fit.iterations, list(fit.active_set), report.passed)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_tune(args) -> int:
    ds = read_dataset(args.dataset)
    d = ds.design
    tau = _resolve_tau(args.tau, ds.y)
    Sn = compute_Sn(d.n, d.g) if args.sn == "auto" else float(args.sn)
    if not Sn > 0:
        raise CliError("--sn must be positive")
    sigma = args.sigma if args.sigma is not None else float(np.std(ds.y, ddof=1))
    if args.grid == "auto":
        grid = default_grid(d.n, d.g, d.p, sigma, DEFAULT_CONSTANTS, Sn=Sn)
        if args.gamma is not None:
            grid = replace(grid, gamma=args.gamma)
    else:
        pairs, dups = read_grid_pairs(args.grid)
        if not pairs:
            raise InputError(f"{args.grid}: grid file has no (lambda1, lambda2) rows")
        if dups:
            log.warning("grid file %s: dropped %d duplicate row(s)", args.grid, dups)
        gamma = args.gamma if args.gamma is not None else _default_gamma(d.n, d.g, d.p)
        grid = TuningGrid.from_pairs(pairs, gamma, Sn)
    _log_config("tune", dataset=args.dataset, n=d.n, g=d.g, p=d.p, tau=tau, Sn=Sn, sigma=sigma,
                gamma=grid.gamma, cells=len(grid.cells()), sweep=args.sweep, pilot=args.pilot)
    pilot = _pilot(ds, tau, args.pilot)
    options = SolverOptions(args.epsilon, args.max_iters, args.sweep)
    best, records = grid_search(d, ds.y, tau, grid, pilot, options, jobs=args.jobs)
    lines = ["lambda1\tlambda2\tbic\tactive_count\tconverged\titerations\tobjective_quantile\tlog_guarded\terror"]
    for r in records:
        lines.append("\t".join([
            fmt(r.lambda1), fmt(r.lambda2), fmt(r.bic_value), str(r.active_count),
            str(r.converged).lower(), str(r.iterations), fmt(r.objective_quantile),
            str(r.log_guarded).lower(), r.error,
        ]))
    table = "\n".join(lines) + "\n"
    if best is None:
        _emit(args.table, table)
        raise CliError("every grid cell failed")
    win = best_record(records)
    config = PenaltyConfig(tau, win.lambda1, win.lambda2, grid.gamma, adaptive_weights(pilot, grid.gamma))
    report = kkt_check(d, ds.y, best, config)
    meta = {"version": __version__, "tau": tau, "lambda1": win.lambda1, "lambda2": win.lambda2,
            "gamma": grid.gamma, "Sn": Sn, "bic": win.bic_value, "kkt_passed": str(report.passed).lower()}
    _emit(args.table, table)
    _emit(args.out, _coef_text(best, ds, meta))
    log.info("winner lambda1=%s lambda2=%s active=%s", fmt(win.lambda1), fmt(win.lambda2), list(best.active_set))
    return EXIT_OK if best.converged else EXIT_NOT_CONVERGED


def _parse_beta(text, g, p):
    text = text.strip()
    if text in PRESETS:
        return preset_beta(text, g)
    groups = [grp for grp in text.split(";") if grp.strip()]
    try:
        rows = [[float(v) for v in grp.replace(",", " ").split()] for grp in groups]
    except ValueError:
        raise InputError(f"beta: expected a preset {sorted(PRESETS)} or 'a,b; c,d' groups") from None
    if len(rows) > g or any(len(r) != p for r in rows):
        raise InputError(f"beta: need at most {g} groups of {p} values")
    values = np.zeros((g, p))
    values[: len(rows)] = rows
    return GroupedCoefficients(values)


def load_scenario(path, reps=None, seed_env=None) -> SimulationScenario:
    raw = read_scenario_file(path)
    try:
        n, g, p = int(raw["n"]), int(raw["g"]), int(raw.get("p", 1))
    except KeyError as exc:
        raise InputError(f"{path}: missing scenario key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    try:
        kw = {}
        if "beta" not in raw:
            raise InputError(f"{path}: missing scenario key 'beta'")
        kw["true_beta"] = _parse_beta(raw["beta"], g, p)
        kw["error_law"] = ErrorLaw(raw.get("error", "normal").lower(), float(raw.get("sigma", 1.0)))
        kw["tau"] = float(raw.get("tau", 0.5))
        kw["replications"] = int(raw.get("reps", 100))
        kw["base_seed"] = int(raw.get("seed", 20190417))
        if "sn" in raw:
            kw["Sn"] = compute_Sn(n, g) if raw["sn"] == "auto" else float(raw["sn"])
        if "constants" in raw:
            kw["constants"] = tuple(float(c) for c in raw["constants"].replace(",", " ").split())
        if "sweep" in raw:
            kw["sweep_mode"] = _sweep_arg(raw["sweep"])
        if "sigma_source" in raw:
            kw["sigma_source"] = raw["sigma_source"]
        if "rho" in raw:
            kw["rho"] = float(raw["rho"])
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if reps is not None:
        kw["replications"] = reps
    env = os.environ.get(SEED_ENV) if seed_env is None else seed_env
    if env:
        try:
            kw["base_seed"] = int(env)
        except ValueError:
            raise InputError(f"{SEED_ENV}={env!r} is not an integer") from None
    try:
        return SimulationScenario(n, g, p, **kw)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _scenario_config(sc):
    return dict(n=sc.n, g=sc.g, p=sc.p, beta=sc.true_beta.values.tolist(), error=str(sc.error_law),
                tau=sc.tau, reps=sc.replications, seed=sc.base_seed, Sn=sc.Sn,
                constants=list(sc.constants), rho=sc.rho, sweep=sc.sweep_mode,
                sigma_source=sc.sigma_source)


def _write_tsv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, float):
        return fmt(v)
    return v


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario, reps=args.reps)
    _log_config("simulate", scenario=args.scenario, jobs=args.jobs, **_scenario_config(sc))
    log.info("seed %d", sc.base_seed)
    metrics = run_scenario(sc, jobs=args.jobs, check_kkt=not args.no_kkt)
    summary = aggregate(metrics, sc.true_active)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    row = {k: _cell(v) for k, v in summary.as_row().items() if k != "mean_runtime_seconds"}
    _write_tsv(out / "summary.tsv", [row])
    reps = []
    for m in metrics:
        reps.append({
            "index": m.index, "correct_nonzero": m.correct_nonzero, "correct_zero": m.correct_zero,
            "mean_abs_prediction_error": fmt(m.mean_abs_prediction_error),
            "l2_error": fmt(m.l2_error), "active_set": " ".join(str(j + 1) for j in m.active_set),
            "converged": _cell(m.converged), "lambda1": fmt(m.lambda1), "lambda2": fmt(m.lambda2),
            "kkt_passed": "" if m.kkt_passed is None else _cell(m.kkt_passed),
            "beta_hat": " ".join(fmt(v) for v in m.beta_hat.ravel()), "failure": m.failure,
        })
    _write_tsv(out / "replications.tsv", reps)
    # wall-clock numbers vary run to run, so they live apart from the reproducible outputs
    _write_tsv(out / "timing.tsv", [{"index": m.index, "runtime_seconds": fmt(m.runtime_seconds)} for m in metrics])
    sys.stdout.write("\t".join(row) + "\n" + "\t".join(str(v) for v in row.values()) + "\n")
    log.info("mean runtime per replication %.3fs", summary.mean_runtime_seconds)
    return EXIT_OK


def cmd_kkt(args) -> int:
    ds = read_dataset(args.dataset)
    d = ds.design
    beta, meta = read_coefficients(args.coefficients, ds)

    def pick(name, cli_value, default=None):
        if cli_value is not None:
            return cli_value
        if name in meta:
            return float(meta[name])
        if default is not None:
            return default
        raise CliError(f"--{name} not given and not present in the coefficient file")

    tau = pick("tau", None if args.tau in (None, "auto") else float(args.tau),
               estimate_tau(ds.y) if args.tau == "auto" else None)
    l1, l2 = pick("lambda1", args.lambda1), pick("lambda2", args.lambda2)
    gamma = pick("gamma", args.gamma, _default_gamma(d.n, d.g, d.p))
    _log_config("kkt", dataset=args.dataset, coefficients=args.coefficients, tau=tau,
                lambda1=l1, lambda2=l2, gamma=gamma, tol=args.tol)
    pilot = _pilot(ds, tau, args.pilot)
    config = PenaltyConfig(tau, l1, l2, gamma, adaptive_weights(pilot, gamma))
    fit = FitResult(beta, active_set(beta), 0, True, objective_penalized(d, ds.y, beta, config),
                    objective_quantile(d, ds.y, beta, tau))
    report = kkt_check(d, ds.y, fit, config, tol=args.tol)
    lines = ["group\tactive\tworst\tvalues"]
    for gk in report.groups:
        lines.append(f"{ds.group_labels[gk.group]}\t{str(gk.active).lower()}\t{fmt(gk.worst)}\t"
                     + " ".join(fmt(v) for v in gk.values))
    lines.append(f"# scale = {fmt(report.scale)}")
    lines.append(f"# tol = {fmt(report.tol)}")
    lines.append(f"# passed = {str(report.passed).lower()}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK if report.passed else EXIT_KKT


def cmd_normality(args) -> int:
    sc = load_scenario(args.scenario, reps=args.reps)
    if args.n is not None:
        sc = replace(sc, n=args.n)
    _log_config("normality", scenario=args.scenario, jobs=args.jobs, **_scenario_config(sc))
    rep = normality_diagnostic(sc, jobs=args.jobs)
    sys.stdout.write(
        f"n\t{rep.n}\nreplications\t{rep.replications}\nused\t{rep.used}\n"
        f"mean_z\t{fmt(rep.mean_z)}\nvariance_ratio\t{fmt(rep.variance_ratio)}\n"
        f"within_band\t{str(rep.within_band).lower()}\n"
    )
    return EXIT_OK


def _add_solver_args(sp):
    sp.add_argument("--tau", type=_tau_arg, default=0.5, help="quantile index in (0,1) or 'auto' (default 0.5)")
    sp.add_argument("--gamma", type=float, default=None,
                    help="weight exponent (default: 1.225 ungrouped, grouped formula otherwise)")
    sp.add_argument("--epsilon", type=float, default=1e-6, help="stop when the iterate moves less than this")
    sp.add_argument("--max-iters", type=int, default=10_000, help="sweep limit")
    sp.add_argument("--sweep", type=_sweep_arg, default="jacobi", help="jacobi (default) or gauss-seidel")
    sp.add_argument("--pilot", choices=("lp", "smoothed"), default="lp", help="unpenalized fit method")


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit code 2 is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="log warnings only")
    ap = _Parser(prog="gqnet", description="Adaptive elastic-net group quantile regression.")
    ap.add_argument("--version", action="version", version=f"gqnet {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("fit", parents=[common], help="fit at fixed tuning parameters")
    sp.add_argument("dataset", help="delimited file: y first, then design columns")
    sp.add_argument("--lambda1", type=_positive, required=True, help="group-norm penalty level")
    sp.add_argument("--lambda2", type=_positive, required=True, help="ridge penalty level (> 0)")
    _add_solver_args(sp)
    sp.add_argument("--out", default=None, help="coefficient file (default stdout)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("tune", parents=[common], help="select (lambda1, lambda2) by BIC")
    sp.add_argument("dataset")
    sp.add_argument("--grid", default="auto", help="'auto' or a file of 'lambda1 lambda2' rows")
    sp.add_argument("--sn", default="auto", help="BIC complexity multiplier, 'auto' or a value")
    sp.add_argument("--sigma", type=float, default=None, help="sigma in the auto grid (default sd(y))")
    sp.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    _add_solver_args(sp)
    sp.add_argument("--out", default=None, help="winning coefficient file (default stdout)")
    sp.add_argument("--table", default=None, help="BIC table file (default stdout)")
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo scenario")
    sp.add_argument("scenario", help="key = value scenario file")
    sp.add_argument("--reps", type=int, default=None, help="override the replication count")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.add_argument("--out", default="gqnet-sim", help="output directory")
    sp.add_argument("--no-kkt", action="store_true", help="skip the per-replication KKT check")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("kkt", parents=[common], help="check first-order conditions of a coefficient file")
    sp.add_argument("dataset")
    sp.add_argument("coefficients")
    sp.add_argument("--lambda1", type=_positive, default=None, help="default: from the coefficient file")
    sp.add_argument("--lambda2", type=_positive, default=None, help="default: from the coefficient file")
    sp.add_argument("--gamma", type=float, default=None, help="default: from the coefficient file")
    sp.add_argument("--tau", default=None, help="default: from the coefficient file; 'auto' estimates it")
    sp.add_argument("--tol", type=float, default=1e-2, help="scaled tolerance")
    sp.add_argument("--pilot", choices=("lp", "smoothed"), default="lp")
    sp.set_defaults(func=cmd_kkt)

    sp = sub.add_parser("normality", parents=[common], help="asymptotic normality diagnostic (not a pass/fail check)")
    sp.add_argument("scenario")
    sp.add_argument("--reps", type=int, default=500)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_normality)
    return ap


def _configure_logging(level):
    pkg = logging.getLogger("gqnet")
    for h in [h for h in pkg.handlers if getattr(h, "_gqnet_cli", False)]:
        pkg.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._gqnet_cli = True
    pkg.addHandler(handler)
    pkg.setLevel(level)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except (InputError, CliError, UnsupportedConfiguration, PilotConvergenceError,
            ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
