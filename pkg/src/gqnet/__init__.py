"""Adaptive elastic-net group quantile regression."""

from .core import (
    ZERO_TOL,
    FitResult,
    GroupedCoefficients,
    GroupedDesign,
    PenaltyConfig,
    ShapeError,
    active_set,
    check_loss,
    knight_identity_residual,
    objective_penalized,
    objective_quantile,
)
from .pilot import PilotConvergenceError, PilotOptions, adaptive_weights, fit_pilot
from .solver import (
    KktReport,
    SolverOptions,
    UnsupportedConfiguration,
    fit_enet,
    group_score,
    group_update,
    kkt_check,
)
from .tuning import (
    BicRecord,
    TuningGrid,
    bic_score,
    compute_Sn,
    default_grid,
    estimate_tau,
    grid_search,
)

__version__ = "0.1.0"
