"""Block-wise subgradient algorithm for the adaptive elastic-net group quantile fit.

Each sweep replaces every group by a closed-form function of the score
``S_j = sum_i X_ij (tau - 1{Y_i < X_{i,-j}' beta_{-j}})``, computed with the
group itself left out of the linear predictor. The group is set to zero when
every component of the score is below ``lambda1 * w_j`` in absolute value and
is otherwise shrunk along the score direction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    ZERO_TOL,
    FitResult,
    GroupedCoefficients,
    GroupedDesign,
    PenaltyConfig,
    ShapeError,
    _check_pair,
    _check_y,
    active_set,
    objective_penalized,
    objective_quantile,
)

log = logging.getLogger(__name__)

# consecutive two-cycle detections before giving up
_TWO_CYCLE_PATIENCE = 10


class UnsupportedConfiguration(ValueError):
    """The closed-form group update divides by ``2 * lambda2`` and needs it positive."""


@dataclass(frozen=True)
class SolverOptions:
    epsilon: float = 1e-6
    max_iters: int = 10_000
    sweep_mode: str = "jacobi"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.sweep_mode not in ("jacobi", "gauss_seidel"):
            raise ValueError(f"unknown sweep mode {self.sweep_mode!r}")


@dataclass(frozen=True)
class GroupKkt:
    group: int
    active: bool
    # active: scaled stationarity residual; inactive: scaled slack lambda1*w - |score|
    values: np.ndarray
    worst: float


@dataclass(frozen=True)
class KktReport:
    groups: tuple[GroupKkt, ...]
    tol: float
    scale: float
    passed: bool

    @property
    def max_active_residual(self) -> float:
        vals = [gk.worst for gk in self.groups if gk.active]
        return max(vals) if vals else 0.0

    @property
    def min_inactive_slack(self) -> float:
        vals = [gk.worst for gk in self.groups if not gk.active]
        return min(vals) if vals else np.inf


def group_score(design: GroupedDesign, y, beta: GroupedCoefficients, j: int, tau: float) -> np.ndarray:
    """Score of group ``j`` with that group removed from the linear predictor."""
    y = _check_y(design, y)
    _check_pair(design, beta)
    Xj = design.values[:, design.columns(j)]
    reduced = design.values @ beta.flat - Xj @ beta.values[j]
    return Xj.T @ (tau - (y < reduced))


def _all_scores(X3, y, b, tau):
    contrib = np.einsum("ngp,gp->ng", X3, b)
    reduced = contrib.sum(axis=1, keepdims=True) - contrib
    return np.einsum("ngp,ng->gp", X3, tau - (y[:, None] < reduced))


def group_update(score, lambda1: float, lambda2: float, weight: float) -> np.ndarray:
    """Closed-form new value of one group given its score.

    Returns zero when ``weight`` is infinite or every ``|score_k| < lambda1 * weight``;
    otherwise ``score / (2 lambda2 + 2 lambda1 lambda2 w / (||score|| - lambda1 w))``,
    whose norm is ``(||score|| - lambda1 w) / (2 lambda2)``.
    """
    score = np.asarray(score, dtype=float)
    if np.isinf(weight):
        return np.zeros_like(score)
    thresh = lambda1 * weight
    if np.all(np.abs(score) < thresh):
        return np.zeros_like(score)
    excess = np.linalg.norm(score) - thresh
    if excess <= 0:
        return np.zeros_like(score)
    if not lambda2 > 0:
        raise UnsupportedConfiguration(
            "lambda2 = 0 is outside the domain of the group update (division by 2*lambda2)"
        )
    return score / (2 * lambda2 + 2 * lambda1 * lambda2 * weight / excess)


def _update_all(S, lambda1, lambda2, weights):
    # vectorized group_update over the rows of S
    out = np.zeros_like(S)
    thresh = lambda1 * weights
    norms = np.linalg.norm(S, axis=1)
    with np.errstate(invalid="ignore"):
        excess = norms - thresh
        live = ~np.isinf(weights) & ~np.all(np.abs(S) < thresh[:, None], axis=1) & (excess > 0)
    if np.any(live):
        if not lambda2 > 0:
            raise UnsupportedConfiguration(
                "lambda2 = 0 is outside the domain of the group update (division by 2*lambda2)"
            )
        denom = 2 * lambda2 + 2 * lambda1 * lambda2 * weights[live] / excess[live]
        out[live] = S[live] / denom[:, None]
    return out


def _sweep(X3, y, b, tau, lambda1, lambda2, weights, mode):
    if mode == "jacobi":
        return _update_all(_all_scores(X3, y, b, tau), lambda1, lambda2, weights)
    b = b.copy()
    fitted = np.einsum("ngp,gp->n", X3, b)
    for j in range(b.shape[0]):
        reduced = fitted - X3[:, j] @ b[j]
        S = X3[:, j].T @ (tau - (y < reduced))
        new = _update_all(S[None], lambda1, lambda2, weights[j:j + 1])[0]
        fitted = reduced + X3[:, j] @ new
        b[j] = new
    return b


def fit_enet(
    design: GroupedDesign,
    y,
    config: PenaltyConfig,
    beta_init: GroupedCoefficients,
    options: SolverOptions | None = None,
) -> FitResult:
    """Iterate group updates from ``beta_init`` until successive iterates differ by < epsilon.

    The map from one iterate to the next depends only on residual signs, so
    the iterates live in a finite set. An exact repeat of an earlier iterate
    (or a persistent two-cycle within epsilon) means the scheme will never
    settle; the fit then stops with ``converged=False`` and returns the cycle
    member with the smallest penalized objective. Exhausting ``max_iters``
    also returns ``converged=False``.
    """
    options = options or SolverOptions()
    y = _check_y(design, y)
    _check_pair(design, beta_init)
    weights = config.weights
    if weights.shape != (design.g,):
        raise ShapeError(f"{weights.size} weights for {design.g} groups")
    if not config.lambda2 > 0:
        raise UnsupportedConfiguration(
            "lambda2 must be positive: the group update divides by 2*lambda2"
        )
    X3 = design.blocks
    tau, l1, l2 = config.tau, config.lambda1, config.lambda2

    b = np.array(beta_init.values, dtype=float)
    history = [b]
    seen = {b.tobytes(): 0}
    two_cycle = 0
    status = "max_iters"
    k = 0
    while k < options.max_iters:
        k += 1
        new = _sweep(X3, y, b, tau, l1, l2, weights, options.sweep_mode)
        step = np.linalg.norm(new - b)
        history.append(new)
        b = new
        if step < options.epsilon:
            status = "converged"
            break
        if k >= 2 and np.linalg.norm(new - history[-3]) < options.epsilon:
            two_cycle += 1
            if two_cycle >= _TWO_CYCLE_PATIENCE:
                status = "cycle"
                cycle = history[-2:]
                break
        else:
            two_cycle = 0
        key = new.tobytes()
        if key in seen:
            status = "cycle"
            cycle = history[seen[key] + 1:]
            break
        seen[key] = k

    if status == "cycle":
        values = [
            objective_penalized(design, y, GroupedCoefficients(c), config) for c in cycle
        ]
        b = cycle[int(np.argmin(values))]
    beta = GroupedCoefficients(b)
    if status != "converged":
        log.debug("fit_enet stopped without converging (%s) after %d sweeps", status, k)
    return FitResult(
        coefficients=beta,
        active_set=active_set(beta, ZERO_TOL),
        iterations=k,
        converged=status == "converged",
        objective_penalized=objective_penalized(design, y, beta, config),
        objective_quantile=objective_quantile(design, y, beta, tau),
        status=status,
    )


def kkt_check(design: GroupedDesign, y, fit: FitResult, config: PenaltyConfig, tol: float = 1e-2) -> KktReport:
    """Check the first-order conditions of the penalized objective at ``fit``.

    Uses the full linear predictor in the indicator. Residuals and slacks
    are divided by ``n * max|X|`` before comparison with ``tol``.
    """
    y = _check_y(design, y)
    beta = fit.coefficients
    _check_pair(design, beta)
    X3 = design.blocks
    tau = config.tau
    scale = design.n * max(float(np.max(np.abs(design.values))), np.finfo(float).tiny)
    below = y < design.values @ beta.flat
    S = np.einsum("ngp,n->gp", X3, tau - below)
    norms = beta.norms()
    reports = []
    passed = True
    for j in range(design.g):
        w = config.weights[j]
        if norms[j] > ZERO_TOL:
            resid = S[j] - 2 * config.lambda2 * beta.values[j]
            if np.isinf(w):
                resid = np.full_like(resid, np.inf)
            else:
                resid = resid - config.lambda1 * w * beta.values[j] / norms[j]
            resid = resid / scale
            worst = float(np.max(np.abs(resid)))
            ok = worst <= tol
            reports.append(GroupKkt(j, True, resid, worst))
        else:
            bound = np.inf if np.isinf(w) else config.lambda1 * w
            slack = (bound - np.abs(S[j])) / scale
            worst = float(np.min(slack))
            ok = worst >= -tol
            reports.append(GroupKkt(j, False, slack, worst))
        passed = passed and ok
    return KktReport(tuple(reports), tol, scale, passed)
