"""BIC-type selection of (lambda1, lambda2) and the default tuning families."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import FitResult, GroupedCoefficients, GroupedDesign, PenaltyConfig, _check_y
from .pilot import adaptive_weights
from .solver import SolverOptions, fit_enet

log = logging.getLogger(__name__)

DEFAULT_CONSTANTS = (0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
UNGROUPED_GAMMA = 1.225


@dataclass(frozen=True)
class TuningGrid:
    """Candidate tuning parameters.

    Without ``pairs`` the search covers the full product of the two value
    lists; ``pairs`` restricts it to explicit (lambda1, lambda2) cells.
    """

    lambda1_values: tuple
    lambda2_values: tuple
    gamma: float
    Sn: float = 1.0
    pairs: tuple | None = None

    def __post_init__(self):
        for name in ("lambda1_values", "lambda2_values"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"{name} is empty")
            if any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise ValueError(f"{name} must be finite and strictly positive")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be sorted ascending without duplicates")
            object.__setattr__(self, name, vals)
        if not self.gamma > 0 or not self.Sn > 0:
            raise ValueError("gamma and Sn must be positive")
        if self.pairs is not None:
            pairs = tuple((float(a), float(b)) for a, b in self.pairs)
            if not pairs:
                raise ValueError("pairs is empty")
            object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_pairs(cls, pairs, gamma: float, Sn: float = 1.0) -> "TuningGrid":
        pairs = sorted(set((float(a), float(b)) for a, b in pairs))
        return cls(
            tuple(sorted({a for a, _ in pairs})),
            tuple(sorted({b for _, b in pairs})),
            gamma, Sn, tuple(pairs),
        )

    def cells(self) -> list[tuple[float, float]]:
        if self.pairs is not None:
            return list(self.pairs)
        return [(a, b) for a in self.lambda1_values for b in self.lambda2_values]


@dataclass(frozen=True)
class BicRecord:
    lambda1: float
    lambda2: float
    bic_value: float
    active_count: int
    converged: bool
    iterations: int = 0
    objective_quantile: float = float("nan")
    # True when the loss was exactly zero and the log argument was floored
    log_guarded: bool = False
    error: str = ""


def _guarded_loss(G, n):
    floor = np.finfo(float).eps * n
    return (floor, True) if G <= 0 else (G, False)


def bic_score(fit: FitResult, design: GroupedDesign, y, tau: float, Sn: float) -> float:
    """``log(G_n / n) + (log n / n) * Sn * |active set|``."""
    n = design.n
    if n < 2:
        raise ValueError("BIC needs n >= 2")
    G, _ = _guarded_loss(fit.objective_quantile, n)
    return math.log(G / n) + math.log(n) / n * Sn * len(fit.active_set)


def compute_Sn(n: int, g: int) -> float:
    """Complexity inflation: 1 while g <= log n, g / log n beyond."""
    if n < 2 or g < 1:
        raise ValueError("need n >= 2 and g >= 1")
    return max(1.0, g / math.log(n))


def grouped_gamma(n: int, g: int) -> float:
    c = math.log(g) / math.log(n)
    return max(UNGROUPED_GAMMA, 2 * c / (1 - c) + 2 / n)


def default_grid(n: int, g: int, p: int, sigma_hint: float, constants=DEFAULT_CONSTANTS, Sn: float | None = None) -> TuningGrid:
    """Tuning families used in the simulation study.

    For p = 1 (or a single group, where the grouped family degenerates)
    lambda1 = n^(1 - gamma/2 + 1/n) and lambda2 = c1 n^(2/5) with gamma = 1.225.
    Otherwise, with c = log g / log n,
    lambda1 = c2 c (sigma + c) g n^(((1-c)/2 + 1 - (1-c)(1+gamma)/2)/2),
    lambda2 = c3 c (sigma + c) n^(1/2 - c/2 - 1/n),
    gamma = max(1.225, 2c/(1-c) + 2/n).
    """
    if g >= n:
        raise ValueError(f"need g < n for the tuning formulas (g={g}, n={n})")
    if n < 2 or g < 1 or p < 1:
        raise ValueError("need n >= 2, g >= 1, p >= 1")
    constants = tuple(sorted(set(float(c) for c in constants)))
    Sn = compute_Sn(n, g) if Sn is None else float(Sn)
    if p == 1 or g == 1:
        gamma = UNGROUPED_GAMMA
        lam1 = (n ** (1 - gamma / 2 + 1 / n),)
        lam2 = tuple(c1 * n ** 0.4 for c1 in constants)
        return TuningGrid(lam1, lam2, gamma, Sn)
    if not sigma_hint > 0:
        raise ValueError("sigma_hint must be positive")
    c = math.log(g) / math.log(n)
    gamma = grouped_gamma(n, g)
    base = c * (sigma_hint + c)
    expo1 = ((1 - c) / 2 + 1 - (1 - c) * (1 + gamma) / 2) / 2
    expo2 = 1 / 2 - c / 2 - 1 / n
    lam1 = tuple(c2 * base * g * n ** expo1 for c2 in constants)
    lam2 = tuple(c3 * base * n ** expo2 for c3 in constants)
    return TuningGrid(lam1, lam2, gamma, Sn)


def _fit_cell(design, y, tau, gamma, weights, pilot, l1, l2, Sn, options):
    try:
        config = PenaltyConfig(tau, l1, l2, gamma, weights)
        fit = fit_enet(design, y, config, pilot, options)
    except Exception as exc:  # recorded per cell, search continues
        log.warning("cell lambda1=%g lambda2=%g failed: %s", l1, l2, exc)
        return None, BicRecord(l1, l2, math.inf, 0, False, error=str(exc))
    _, guarded = _guarded_loss(fit.objective_quantile, design.n)
    rec = BicRecord(
        l1, l2, bic_score(fit, design, y, tau, Sn), len(fit.active_set), fit.converged,
        fit.iterations, fit.objective_quantile, guarded,
    )
    return fit, rec


def _rank_key(rec: BicRecord):
    # smaller BIC; on ties converged first, then larger lambda1, then larger lambda2
    return (rec.bic_value, not rec.converged, -rec.lambda1, -rec.lambda2)


def grid_search(
    design: GroupedDesign,
    y,
    tau: float,
    grid: TuningGrid,
    pilot: GroupedCoefficients,
    options: SolverOptions | None = None,
    jobs: int = 1,
    beta_init: GroupedCoefficients | None = None,
) -> tuple[FitResult | None, list[BicRecord]]:
    """Fit every grid cell from a shared pilot and return the BIC minimizer.

    Weights come from ``pilot`` with ``grid.gamma``; iterations start at
    ``beta_init`` (the pilot by default). Records are returned in grid order.
    """
    y = _check_y(design, y)
    weights = adaptive_weights(pilot, grid.gamma)
    start = pilot if beta_init is None else beta_init
    cells = grid.cells()
    args = [(design, y, tau, grid.gamma, weights, start, a, b, grid.Sn, options) for a, b in cells]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda a: _fit_cell(*a), args))
    else:
        results = [_fit_cell(*a) for a in args]
    records = [rec for _, rec in results]
    scored = [(rec, fit) for fit, rec in results if fit is not None]
    if not scored:
        return None, records
    best = min(scored, key=lambda rf: _rank_key(rf[0]))
    return best[1], records


def best_record(records: list[BicRecord]) -> BicRecord:
    """The record of the cell :func:`grid_search` selects."""
    return min(records, key=_rank_key)


def estimate_tau(y) -> float:
    """Share of standardized responses below zero, clamped to [1/n, 1 - 1/n]."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 2:
        raise ValueError("need at least two observations")
    sd = np.std(y, ddof=1)
    if not sd > 0:
        raise ValueError("response has zero variance")
    z = (y - y.mean()) / sd
    frac = np.count_nonzero(z < 0) / n
    return float(min(max(frac, 1 / n), 1 - 1 / n))
