"""Ground states and semiclassical concentration for a coupled cubic
Schroedinger system with potentials, on uniform finite-difference grids."""

__version__ = "0.1.0"

from .grid import Field, Grid, State, make_grid
from .ground_state import (Classification, GroundState, SeedSpec, SolverOptions, classify_state,
                           scalar_ground_state, system_ground_state)
from .model import (CappedQuadratic, Constant, DoubleWell, FrozenParams, ModelParams, global_thresholds, h_func,
                    local_thresholds)

__all__ = [
    "CappedQuadratic", "Classification", "Constant", "DoubleWell", "Field", "FrozenParams", "Grid",
    "GroundState", "ModelParams", "SeedSpec", "SolverOptions", "State", "classify_state", "global_thresholds",
    "h_func", "local_thresholds", "make_grid", "scalar_ground_state", "system_ground_state",
]
