"""Budget-driven selection of CPU frequency and maximum speed for a ground robot."""

from .controller import ControllerConfig, Mode, init_controller
from .profiles import (ControlPair, Grid, LookupTable, ModelParams, build_lookup_table, calibrate,
                       default_grid, default_params, default_table)
from .solver import InfeasibleError, Solution, SolveRequest, solve_ee, solve_pecc

__all__ = [
    "ControlPair", "ControllerConfig", "Grid", "InfeasibleError", "LookupTable", "Mode",
    "ModelParams", "Solution", "SolveRequest", "build_lookup_table", "calibrate", "default_grid",
    "default_params", "default_table", "init_controller", "solve_ee", "solve_pecc",
]
