"""Campaign-level demand optimisation over replayed alpha options."""

from .grid import (
    AdOptions,
    AllocationResult,
    CampaignProblem,
    Demand,
    ValuationGrid,
    alpha_points,
    build_grid,
    profiles_for,
)
from .gmv import CostLattice, optimize_gmv
from .style import (
    LevelSolution,
    PiecewiseLinear,
    normalized_std,
    optimize_style,
    solve_level_projection,
    squared_deviation,
)

__all__ = [
    "AdOptions",
    "AllocationResult",
    "CampaignProblem",
    "CostLattice",
    "Demand",
    "LevelSolution",
    "PiecewiseLinear",
    "ValuationGrid",
    "alpha_points",
    "build_grid",
    "normalized_std",
    "optimize_gmv",
    "optimize_style",
    "profiles_for",
    "solve_level_projection",
    "squared_deviation",
]
