"""Core data types and objectives for grouped quantile regression.

The model has no intercept and every group holds the same number of columns.
Groups are laid out contiguously: column ``j * p + k`` is variable ``k`` of
group ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Group norms at or below this are treated as exactly zero.
ZERO_TOL = 1e-10


class ShapeError(ValueError):
    """Raised when arrays do not have mutually consistent dimensions."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupedDesign:
    """An ``n x (g*p)`` design whose columns are split into ``g`` groups of ``p``."""

    values: np.ndarray
    g: int
    p: int

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ShapeError(f"design must be 2-D, got shape {values.shape}")
        if self.g < 1 or self.p < 1 or values.shape[0] < 1:
            raise ShapeError("need n >= 1, g >= 1, p >= 1")
        if values.shape[1] != self.g * self.p:
            raise ShapeError(
                f"design has {values.shape[1]} columns, expected g*p = {self.g * self.p}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("design contains non-finite entries")
        object.__setattr__(self, "values", values)

    @classmethod
    def ungrouped(cls, values) -> "GroupedDesign":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(values, g=values.shape[1], p=1)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def r(self) -> int:
        return self.g * self.p

    @property
    def blocks(self) -> np.ndarray:
        """View of the design as an ``(n, g, p)`` array."""
        return self.values.reshape(self.n, self.g, self.p)

    def group_of(self, column: int) -> int:
        if not 0 <= column < self.r:
            raise IndexError(column)
        return column // self.p

    def columns(self, j: int) -> slice:
        return slice(j * self.p, (j + 1) * self.p)

    def predict(self, beta: "GroupedCoefficients") -> np.ndarray:
        _check_pair(self, beta)
        return self.values @ beta.flat

    def take_rows(self, idx) -> "GroupedDesign":
        return GroupedDesign(self.values[np.asarray(idx)], self.g, self.p)


@dataclass(frozen=True)
class GroupedCoefficients:
    """Coefficient vector stored as a ``(g, p)`` array, one row per group."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ShapeError(f"coefficients must be (g, p), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficients contain non-finite entries")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_flat(cls, flat, g: int, p: int) -> "GroupedCoefficients":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (g * p,):
            raise ShapeError(f"expected {g * p} coefficients, got shape {flat.shape}")
        return cls(flat.reshape(g, p))

    @classmethod
    def zeros(cls, g: int, p: int) -> "GroupedCoefficients":
        return cls(np.zeros((g, p)))

    @property
    def g(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def groups(self) -> list[np.ndarray]:
        return list(self.values)

    def norms(self) -> np.ndarray:
        # scaled so tiny nonzero groups do not underflow to a zero norm
        peak = np.max(np.abs(self.values), axis=1)
        safe = np.where(peak > 0, peak, 1.0)
        return peak * np.linalg.norm(self.values / safe[:, None], axis=1)

    def __eq__(self, other):
        if not isinstance(other, GroupedCoefficients):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True)
class PenaltyConfig:
    """Quantile index, the two tuning parameters and the adaptive group weights.

    ``weights`` may contain ``inf`` for groups whose pilot estimate vanished.
    """

    tau: float
    lambda1: float
    lambda2: float
    gamma: float
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        weights = _frozen(self.weights)
        if weights.ndim != 1 or np.any(np.isnan(weights)) or np.any(weights < 0):
            raise ValueError("weights must be a 1-D nonnegative vector")
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class FitResult:
    coefficients: GroupedCoefficients
    active_set: tuple[int, ...]
    iterations: int
    converged: bool
    objective_penalized: float
    objective_quantile: float
    # "converged", "max_iters" or "cycle"
    status: str = "converged"


def _check_pair(design: GroupedDesign, beta: GroupedCoefficients) -> None:
    if (beta.g, beta.p) != (design.g, design.p):
        raise ShapeError(
            f"coefficients are ({beta.g}, {beta.p}) but design groups are "
            f"({design.g}, {design.p})"
        )


def _check_y(design: GroupedDesign, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ShapeError(f"response has shape {y.shape}, expected ({design.n},)")
    return y


def check_loss(u, tau: float):
    """Quantile check loss ``u * (tau - 1{u < 0})``, elementwise."""
    u = np.asarray(u, dtype=float)
    out = np.where(u < 0, (tau - 1.0) * u, tau * u)
    return out if out.ndim else float(out)


def objective_quantile(design: GroupedDesign, y, beta: GroupedCoefficients, tau: float) -> float:
    y = _check_y(design, y)
    return float(np.sum(check_loss(y - design.predict(beta), tau)))


def penalty_value(beta: GroupedCoefficients, config: PenaltyConfig) -> float:
    norms = beta.norms()
    if config.weights.shape != norms.shape:
        raise ShapeError(f"{config.weights.size} weights for {norms.size} groups")
    l1_terms = np.zeros_like(norms)
    live = norms > 0
    if np.any(np.isinf(config.weights[live])):
        return np.inf
    l1_terms[live] = config.weights[live] * norms[live]
    return float(config.lambda1 * l1_terms.sum() + config.lambda2 * np.sum(norms**2))


def objective_penalized(design: GroupedDesign, y, beta: GroupedCoefficients, config: PenaltyConfig) -> float:
    """Quantile loss plus weighted group-norm and squared-norm penalties.

    An infinite weight contributes nothing while its group is zero and makes
    the objective ``inf`` otherwise.
    """
    return objective_quantile(design, y, beta, config.tau) + penalty_value(beta, config)


def active_set(beta: GroupedCoefficients, eta: float = ZERO_TOL) -> tuple[int, ...]:
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return tuple(int(j) for j in np.flatnonzero(beta.norms() > eta))


def _indicator_integral(x, y):
    # closed form of int_0^y (1{x <= v} - 1{x <= 0}) dv
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pos = np.clip(y - np.maximum(x, 0.0), 0.0, None)
    neg = np.clip(np.minimum(x, 0.0) - y, 0.0, None)
    return np.where(y >= 0, np.where(x > 0, pos, 0.0), np.where(x <= 0, neg, 0.0))


def knight_identity_residual(x, y, tau: float):
    """Absolute defect of Knight's identity for the check loss.

    ``rho(x - y) - rho(x) = y (1{x<0} - tau) + int_0^y (1{x<=v} - 1{x<=0}) dv``
    holds for all real ``x, y``; the return value is zero up to rounding.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lhs = check_loss(x - y, tau) - check_loss(x, tau)
    rhs = y * ((x < 0).astype(float) - tau) + _indicator_integral(x, y)
    out = np.abs(lhs - rhs)
    return out if out.ndim else float(out)
