"""Synthetic grouped designs and seeded Monte Carlo replications of the full pipeline.

Every replication draws from its own Philox stream keyed by
``(base_seed, replication_index)``, so results do not depend on execution
order or on how replications are spread over workers.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import GroupedCoefficients, GroupedDesign, PenaltyConfig, active_set
from .pilot import PilotConvergenceError, PilotOptions, adaptive_weights, fit_pilot
from .solver import SolverOptions, kkt_check
from .tuning import TuningGrid, best_record, default_grid, grid_search

log = logging.getLogger(__name__)

PRESETS = {
    "ungrouped": [[0.5], [1.0], [-1.0], [-1.5]],
    "p2": [[0.5, 1.0], [1.0, 1.0], [-1.0, 0.0], [-1.5, 1.0]],
    "p5": [
        [0.5, 1.0, 1.5, 1.0, 0.5],
        [1.0, 1.0, 1.0, 1.0, 1.0],
        [-1.0, 0.0, 1.0, 2.0, 1.5],
        [-1.5, 1.0, 0.5, 0.5, 0.5],
    ],
}


def preset_beta(name: str, g: int) -> GroupedCoefficients:
    """Four significant groups from a preset followed by ``g - 4`` zero groups."""
    try:
        head = np.array(PRESETS[name], dtype=float)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if g < head.shape[0]:
        raise ValueError(f"preset {name!r} needs g >= {head.shape[0]}")
    values = np.zeros((g, head.shape[1]))
    values[: head.shape[0]] = head
    return GroupedCoefficients(values)


@dataclass(frozen=True)
class ErrorLaw:
    kind: str = "normal"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "cauchy"):
            raise ValueError(f"unknown error law {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def quantile(self, tau: float) -> float:
        if self.kind == "normal":
            return self.sigma * float(stats.norm.ppf(tau))
        return self.sigma * math.tan(math.pi * (tau - 0.5))

    def density_at_quantile(self, tau: float) -> float:
        q = self.quantile(tau)
        if self.kind == "normal":
            return float(stats.norm.pdf(q, scale=self.sigma))
        return float(stats.cauchy.pdf(q, scale=self.sigma))

    def __str__(self):
        return f"{self.kind}({self.sigma:g})"


@dataclass(frozen=True)
class SimulationScenario:
    n: int
    g: int
    p: int
    true_beta: GroupedCoefficients
    error_law: ErrorLaw = field(default_factory=ErrorLaw)
    tau: float = 0.5
    replications: int = 100
    base_seed: int = 20190417
    # "auto" builds the default families from each replication's data
    grid: TuningGrid | str = "auto"
    Sn: float = 1.0
    constants: tuple = (0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
    rho: float = 0.6
    sweep_mode: str = "jacobi"
    # sigma in the lambda families: "error" uses the error-law scale, "sd_y" the response sd
    sigma_source: str = "error"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if (self.true_beta.g, self.true_beta.p) != (self.g, self.p):
            raise ValueError("true_beta does not match (g, p)")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.sigma_source not in ("error", "sd_y"):
            raise ValueError("sigma_source must be 'error' or 'sd_y'")
        if self.grid != "auto" and not isinstance(self.grid, TuningGrid):
            raise ValueError("grid must be 'auto' or a TuningGrid")

    @property
    def true_active(self) -> tuple[int, ...]:
        return active_set(self.true_beta, 0.0)


@dataclass(frozen=True)
class ReplicationMetrics:
    index: int
    correct_nonzero: int
    correct_zero: int
    errors_flat: np.ndarray
    mean_abs_prediction_error: float
    runtime_seconds: float
    beta_hat: np.ndarray
    active_set: tuple[int, ...]
    converged: bool
    lambda1: float = float("nan")
    lambda2: float = float("nan")
    kkt_passed: bool | None = None
    failure: str = ""

    @property
    def exact_recovery(self) -> bool:
        return not self.failure and self.correct_nonzero + self.correct_zero == self.beta_hat.shape[0]

    @property
    def l2_error(self) -> float:
        return float(np.linalg.norm(self.errors_flat))

    def key(self):
        """Everything except wall-clock time, for reproducibility checks."""
        return (
            self.index, self.correct_nonzero, self.correct_zero, self.errors_flat.tobytes(),
            self.mean_abs_prediction_error, self.beta_hat.tobytes(), self.active_set,
            self.converged, self.lambda1, self.lambda2, self.kkt_passed, self.failure,
        )


def replication_rng(base_seed: int, index: int) -> np.random.Generator:
    """Philox stream for one replication."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def gen_design(n: int, g: int, p: int, rng: np.random.Generator, rho: float = 0.6) -> GroupedDesign:
    """Columns ``(Z_j + R_jk) / sqrt(2)`` with ``Cov(Z_a, Z_b) = rho^|a-b|``."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    idx = np.arange(g)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("group covariance is not positive definite") from exc
    Z = rng.standard_normal((n, g)) @ chol.T
    R = rng.standard_normal((n, g * p))
    return GroupedDesign((np.repeat(Z, p, axis=1) + R) / math.sqrt(2.0), g, p)


def gen_errors(law: ErrorLaw, n: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. errors shifted so that P[eps < 0] = tau."""
    if law.kind == "normal":
        raw = law.sigma * rng.standard_normal(n)
    else:
        raw = law.sigma * rng.standard_cauchy(n)
    return raw - law.quantile(tau)


def simulate_data(scenario: SimulationScenario, index: int):
    rng = replication_rng(scenario.base_seed, index)
    design = gen_design(scenario.n, scenario.g, scenario.p, rng, scenario.rho)
    eps = gen_errors(scenario.error_law, scenario.n, scenario.tau, rng)
    y = design.predict(scenario.true_beta) + eps
    return design, y


def _grid_for(scenario, y):
    if isinstance(scenario.grid, TuningGrid):
        return scenario.grid
    if scenario.sigma_source == "error":
        sigma = scenario.error_law.sigma
    else:
        sigma = float(np.std(y, ddof=1))
    return default_grid(scenario.n, scenario.g, scenario.p, sigma, scenario.constants, Sn=scenario.Sn)


def run_replication(scenario: SimulationScenario, replication_index: int, check_kkt: bool = True) -> ReplicationMetrics:
    """Simulate one data set, tune by BIC and score the selected fit."""
    t0 = time.perf_counter()
    design, y = simulate_data(scenario, replication_index)
    truth = scenario.true_beta
    true_nz = truth.norms() > 0
    g, p = scenario.g, scenario.p

    try:
        pilot = fit_pilot(design, y, scenario.tau, PilotOptions())
        grid = _grid_for(scenario, y)
        best, records = grid_search(
            design, y, scenario.tau, grid, pilot, SolverOptions(sweep_mode=scenario.sweep_mode)
        )
        if best is None:
            raise RuntimeError("every grid cell failed")
    except (PilotConvergenceError, ValueError, RuntimeError) as exc:
        log.warning("replication %d failed: %s", replication_index, exc)
        return ReplicationMetrics(
            replication_index, 0, 0, truth.flat.copy(), float(np.mean(np.abs(y))),
            time.perf_counter() - t0, np.zeros((g, p)), (), False, failure=str(exc),
        )
    winner = best_record(records)
    est = best.coefficients
    selected = np.zeros(g, dtype=bool)
    selected[list(best.active_set)] = True
    kkt_ok = None
    if check_kkt:
        weights = adaptive_weights(pilot, grid.gamma)
        config = PenaltyConfig(scenario.tau, winner.lambda1, winner.lambda2, grid.gamma, weights)
        kkt_ok = kkt_check(design, y, best, config).passed
    return ReplicationMetrics(
        index=replication_index,
        correct_nonzero=int(np.sum(selected & true_nz)),
        correct_zero=int(np.sum(~selected & ~true_nz)),
        errors_flat=(truth.values - est.values).ravel(),
        mean_abs_prediction_error=float(np.mean(np.abs(y - design.predict(est)))),
        runtime_seconds=time.perf_counter() - t0,
        beta_hat=np.array(est.values),
        active_set=best.active_set,
        converged=best.converged,
        lambda1=winner.lambda1,
        lambda2=winner.lambda2,
        kkt_passed=kkt_ok,
    )


def _run_chunk(scenario, indices, check_kkt):
    return [run_replication(scenario, i, check_kkt) for i in indices]


def run_scenario(scenario: SimulationScenario, jobs: int = 1, check_kkt: bool = True, progress=None) -> list[ReplicationMetrics]:
    """All replications of a scenario, ordered by index regardless of ``jobs``."""
    indices = list(range(scenario.replications))
    if jobs <= 1:
        out = []
        for i in indices:
            out.append(run_replication(scenario, i, check_kkt))
            if progress:
                progress(i)
        return out
    chunks = [indices[k::jobs] for k in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_run_chunk, [scenario] * jobs, chunks, [check_kkt] * jobs))
    return sorted((m for part in parts for m in part), key=lambda m: m.index)


@dataclass(frozen=True)
class Summary:
    replications: int
    failures: int
    median_correct_nonzero: float
    mean_correct_nonzero: float
    median_correct_zero: float
    mean_correct_zero: float
    sd_error: float
    mean_abs_prediction_error: float
    mean_runtime_seconds: float
    exact_recovery_fraction: float
    median_l2_error: float
    converged_fraction: float
    # (|A0|, p) medians of the estimates over the truly nonzero groups
    median_beta_active: np.ndarray

    def as_row(self) -> dict:
        row = {k: v for k, v in self.__dict__.items() if k != "median_beta_active"}
        for j, grp in enumerate(self.median_beta_active):
            row[f"median_beta_{j + 1}"] = "(" + ", ".join("%.17g" % v for v in grp) + ")"
        return row


def aggregate(metrics: list[ReplicationMetrics], true_active: tuple[int, ...] | None = None) -> Summary:
    """Table-style summary: selection counts, pooled error sd, prediction error, runtime."""
    if not metrics:
        raise ValueError("no replications to aggregate")
    nz = np.array([m.correct_nonzero for m in metrics], dtype=float)
    zz = np.array([m.correct_zero for m in metrics], dtype=float)
    errs = np.concatenate([m.errors_flat for m in metrics])
    if true_active is None:
        true_active = tuple(range(metrics[0].beta_hat.shape[0]))
    betas = np.stack([m.beta_hat for m in metrics])
    return Summary(
        replications=len(metrics),
        failures=sum(bool(m.failure) for m in metrics),
        median_correct_nonzero=float(np.median(nz)),
        mean_correct_nonzero=float(np.mean(nz)),
        median_correct_zero=float(np.median(zz)),
        mean_correct_zero=float(np.mean(zz)),
        sd_error=float(np.std(errs, ddof=1)) if errs.size > 1 else 0.0,
        mean_abs_prediction_error=float(np.mean([m.mean_abs_prediction_error for m in metrics])),
        mean_runtime_seconds=float(np.mean([m.runtime_seconds for m in metrics])),
        exact_recovery_fraction=float(np.mean([m.exact_recovery for m in metrics])),
        median_l2_error=float(np.median([m.l2_error for m in metrics])),
        converged_fraction=float(np.mean([m.converged for m in metrics])),
        median_beta_active=np.median(betas[:, list(true_active), :], axis=0),
    )


@dataclass(frozen=True)
class NormalityReport:
    n: int
    replications: int
    used: int
    mean_z: float
    variance_ratio: float

    @property
    def within_band(self) -> bool:
        return abs(self.mean_z) < 0.2 and 0.7 <= self.variance_ratio <= 1.3


def normality_diagnostic(scenario: SimulationScenario, direction=None, jobs: int = 1) -> NormalityReport:
    """Standardized linear contrasts of the active-group estimates.

    For each replication that recovers the true active set,
    ``z = sqrt(n) u'(b_hat - b0) / sqrt(tau (1 - tau) / f^2 * u' U^-1 u)`` with
    ``U = X_A' X_A / n`` and ``f`` the error density at its tau-quantile.
    Under asymptotic normality ``z`` has mean 0 and variance 1. Replications
    that miss the active set are skipped. Not a gated check.
    """
    metrics = run_scenario(scenario, jobs=jobs, check_kkt=False)
    cols = np.concatenate([
        np.arange(j * scenario.p, (j + 1) * scenario.p) for j in scenario.true_active
    ])
    u = np.zeros(cols.size) if direction is None else np.asarray(direction, dtype=float)
    if direction is None:
        u[0] = 1.0
    tau = scenario.tau
    f = scenario.error_law.density_at_quantile(tau)
    zs = []
    for m in metrics:
        if not m.exact_recovery:
            continue
        design, _ = simulate_data(scenario, m.index)
        XA = design.values[:, cols]
        U = XA.T @ XA / scenario.n
        var = tau * (1 - tau) / f**2 * float(u @ np.linalg.solve(U, u))
        diff = -m.errors_flat[cols]
        zs.append(math.sqrt(scenario.n) * float(u @ diff) / math.sqrt(var))
    zs = np.array(zs)
    if zs.size < 2:
        return NormalityReport(scenario.n, len(metrics), int(zs.size), float("nan"), float("nan"))
    return NormalityReport(
        scenario.n, len(metrics), int(zs.size), float(zs.mean()), float(zs.var(ddof=1))
    )
