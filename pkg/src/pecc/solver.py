"""Pair selection by exhaustive enumeration.

The PECC problem picks exactly one (f, s_max) pair from the lookup table,
minimising

    (f_max - f) / f_max + (S_max - s_max) / S_max + omega * eps

subject to RD(pair) <= rd_des, P(pair) / s_max <= e_bpm + eps and eps >= 0.
For a fixed pair the best eps is max(0, P / s_max - e_bpm), so scanning every
pair is an exact solution of the binary program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .profiles import ControlPair, Grid, LookupTable, PerfRecord

DEFAULT_OMEGA = 0.2  # per (J/m)


class InfeasibleError(ValueError):
    """No pair satisfies the reaction-distance bound."""

    def __init__(self, rd_des: float, min_rd: float):
        self.rd_des = rd_des
        self.min_rd = min_rd
        super().__init__(
            f"infeasible: desired reaction distance {rd_des:g} m is below the platform "
            f"minimum {min_rd:.4g} m")


@dataclass(frozen=True)
class SolveRequest:
    rd_des: float                 # m
    e_bpm: float                  # J/m
    omega: float = DEFAULT_OMEGA  # 1/(J/m)

    def __post_init__(self):
        if not self.rd_des > 0:
            raise ValueError(f"rd_des must be positive, got {self.rd_des}")
        if not self.e_bpm >= 0:
            raise ValueError(f"e_bpm must be non-negative, got {self.e_bpm}")
        if not (self.omega >= 0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be non-negative and finite, got {self.omega}")


@dataclass(frozen=True)
class Solution:
    pair: ControlPair
    epsilon: float               # J/m
    objective: float
    energy_per_meter_est: float  # J/m
    rd_est: float                # m
    kind: str = "pecc"           # "ee" solutions report energy per meter as objective


def objective_value(pair: ControlPair, epsilon: float, grid: Grid, omega: float) -> float:
    return ((grid.f_max - pair.frequency) / grid.f_max
            + (grid.s_max - pair.max_speed) / grid.s_max
            + omega * epsilon)


def feasible_set(table: LookupTable, rd_des: float) -> list[PerfRecord]:
    return [r for r in table.records if r.reaction_distance <= rd_des]


def _argmin(cost: np.ndarray, mask: np.ndarray, cols: dict[str, np.ndarray]) -> int:
    # Ties: higher speed, then higher frequency, then lower grid index.
    candidates = np.flatnonzero(mask)
    order = np.lexsort((candidates, -cols["frequency"][candidates],
                        -cols["max_speed"][candidates], cost[candidates]))
    return int(candidates[order[0]])


def _feasible_mask(table: LookupTable, rd_des: float) -> np.ndarray:
    mask = table.arrays["rd"] <= rd_des
    if not mask.any():
        raise InfeasibleError(rd_des, table.min_reaction_distance)
    return mask


def solve_pecc(table: LookupTable, req: SolveRequest) -> Solution:
    cols = table.arrays
    mask = _feasible_mask(table, req.rd_des)
    grid = table.grid
    eps = np.maximum(0.0, cols["epm"] - req.e_bpm)
    cost = ((grid.f_max - cols["frequency"]) / grid.f_max
            + (grid.s_max - cols["max_speed"]) / grid.s_max
            + req.omega * eps)
    i = _argmin(cost, mask, cols)
    rec = table.records[i]
    sol = Solution(rec.pair, float(eps[i]), float(cost[i]), rec.energy_per_meter, rec.reaction_distance)
    assert sol.rd_est <= req.rd_des, "selected pair violates the reaction-distance bound"
    return sol


def solve_ee(table: LookupTable, rd_des: float) -> Solution:
    """Energy-efficient baseline: minimum J/m among the RD-feasible pairs."""
    cols = table.arrays
    mask = _feasible_mask(table, rd_des)
    i = _argmin(cols["epm"], mask, cols)
    rec = table.records[i]
    sol = Solution(rec.pair, 0.0, rec.energy_per_meter, rec.energy_per_meter, rec.reaction_distance, kind="ee")
    assert sol.rd_est <= rd_des, "selected pair violates the reaction-distance bound"
    return sol
