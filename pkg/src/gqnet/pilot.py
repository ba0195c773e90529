"""Unpenalized group quantile fit and the adaptive weights built from it."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .core import ZERO_TOL, GroupedCoefficients, GroupedDesign, _check_y, objective_quantile

log = logging.getLogger(__name__)


class PilotConvergenceError(RuntimeError):
    """The pilot fit did not reach the requested accuracy.

    ``best`` holds the best iterate found and ``objective`` its quantile loss.
    """

    def __init__(self, message, best=None, objective=np.nan):
        super().__init__(message)
        self.best = best
        self.objective = objective


def _default_schedule():
    return tuple(10.0 ** -k for k in range(1, 10))


@dataclass(frozen=True)
class PilotOptions:
    """Options for :func:`fit_pilot`.

    method : ``"lp"`` solves the exact linear program with HiGHS;
        ``"smoothed"`` minimizes a smoothed check loss along a shrinking
        radius schedule and snaps to the nearest basic solution.
    """

    method: str = "lp"
    smoothing_schedule: tuple = field(default_factory=_default_schedule)
    objective_tol: float = 1e-8
    max_iters: int = 5000

    def __post_init__(self):
        if self.method not in ("lp", "smoothed"):
            raise ValueError(f"unknown pilot method {self.method!r}")
        sched = np.asarray(self.smoothing_schedule, dtype=float)
        if sched.size == 0 or np.any(sched <= 0) or np.any(np.diff(sched) >= 0):
            raise ValueError("smoothing schedule must be positive and strictly decreasing")
        if sched[-1] >= 1e-8:
            raise ValueError("smoothing schedule must end below 1e-8")
        if self.objective_tol <= 0 or self.max_iters < 1:
            raise ValueError("objective_tol and max_iters must be positive")


def _warn_conditioning(X):
    n, r = X.shape
    if r >= n:
        warnings.warn(f"r_n = {r} >= n = {n}: pilot estimator is not unique", RuntimeWarning)
        return
    cond = np.linalg.cond(X)
    if not np.isfinite(cond) or cond > 1e8:
        warnings.warn(f"design is ill-conditioned (cond = {cond:.3g})", RuntimeWarning)


def _solve_lp(X, y, tau, max_iters):
    # min tau 1'u + (1 - tau) 1'v  s.t.  X b + u - v = y,  u, v >= 0
    n, r = X.shape
    c = np.concatenate([np.zeros(r), np.full(n, tau), np.full(n, 1.0 - tau)])
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")
    bounds = [(None, None)] * r + [(0, None)] * (2 * n)
    res = optimize.linprog(
        c, A_eq=A, b_eq=y, bounds=bounds, method="highs",
        options={"maxiter": max_iters, "primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0 or res.x is None:
        best = None if res.x is None else res.x[:r]
        raise PilotConvergenceError(f"linear program failed: {res.message}", best=best)
    return res.x[:r]


def _smooth_loss(beta, X, y, tau, delta):
    # (tau - 1/2) u + (sqrt(u^2 + delta^2) - delta) / 2: smooth, within delta/2 of rho
    u = y - X @ beta
    root = np.sqrt(u * u + delta * delta)
    val = np.sum((tau - 0.5) * u + 0.5 * (root - delta))
    dval_du = (tau - 0.5) + 0.5 * u / root
    return val, -X.T @ dval_du


def _vertex_candidates(X, y, beta, tau):
    """Basic solutions through the rows with the smallest residuals."""
    n, r = X.shape
    order = np.argsort(np.abs(y - X @ beta), kind="stable")
    out = []
    # the r smallest, then a few one-row swaps in case ties straddle the cut
    base = list(order[:r])
    trials = [base] + [base[:k] + base[k + 1:] + [order[r + m]]
                       for k in range(r) for m in range(min(2, n - r))]
    for rows in trials:
        sub = X[rows]
        if np.linalg.matrix_rank(sub) < r:
            continue
        out.append(np.linalg.solve(sub, y[rows]))
    return out


def _solve_smoothed(X, y, tau, options: PilotOptions):
    n, r = X.shape
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    for delta in options.smoothing_schedule:
        res = optimize.minimize(
            _smooth_loss, beta, args=(X, y, tau, delta), jac=True, method="L-BFGS-B",
            options={"maxiter": options.max_iters, "gtol": 1e-12, "ftol": 1e-15},
        )
        beta = res.x

    def loss(b):
        u = y - X @ b
        return float(np.sum(u * (tau - (u < 0))))

    best, best_val = beta, loss(beta)
    for cand in _vertex_candidates(X, y, beta, tau):
        val = loss(cand)
        if val < best_val:
            best, best_val = cand, val
    if not _subgradient_certificate(X, y, best, tau, tol=1e-7 * (1 + best_val)):
        raise PilotConvergenceError(
            "smoothed descent did not reach an optimal vertex", best=best, objective=best_val
        )
    return best


def _subgradient_certificate(X, y, beta, tau, tol):
    """Check that zero lies in the subdifferential of the check loss at beta."""
    u = y - X @ beta
    scale = 1e-9 * (1 + np.max(np.abs(y)))
    zero = np.abs(u) <= scale
    s = X[~zero].T @ (tau - (u[~zero] < 0))
    if not np.any(zero):
        return np.all(np.abs(s) <= tol)
    # need v in [tau - 1, tau]^|Z| with X_Z' v = -s
    Xz = X[zero]
    res = optimize.linprog(
        np.zeros(Xz.shape[0]), A_eq=Xz.T, b_eq=-s,
        bounds=[(tau - 1 - tol, tau + tol)] * Xz.shape[0], method="highs",
    )
    return res.status == 0


def fit_pilot(design: GroupedDesign, y, tau: float, options: PilotOptions | None = None) -> GroupedCoefficients:
    """Unpenalized quantile regression estimate used to seed the weights."""
    options = options or PilotOptions()
    y = _check_y(design, y)
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    X = design.values
    _warn_conditioning(X)
    if options.method == "lp":
        beta = _solve_lp(X, y, tau, options.max_iters)
    else:
        beta = _solve_smoothed(X, y, tau, options)
    out = GroupedCoefficients.from_flat(beta, design.g, design.p)
    log.debug("pilot objective %.17g", objective_quantile(design, y, out, tau))
    return out


def adaptive_weights(beta_pilot: GroupedCoefficients, gamma: float, eta: float = ZERO_TOL) -> np.ndarray:
    """Group weights ``||beta_j||^-gamma``; ``inf`` where the pilot group vanished."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    norms = beta_pilot.norms()
    out = np.full(norms.shape, np.inf)
    live = norms > eta
    out[live] = norms[live] ** (-gamma)
    return out
