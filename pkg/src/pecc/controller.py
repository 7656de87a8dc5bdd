"""Runtime budget controller.

Three policies share one ledger:

* ``PECC-0``     solve once at task start with E_b / path length
* ``PECC-delta`` re-solve every ``delta`` seconds of simulated time with
                 max(0, E_avail) / d_r
* ``EE``         energy-efficient baseline, solved once, budget-blind

A ``fixed`` mode pins a single pair and exists for profiling runs.
"""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .profiles import ControlPair, LookupTable
from .solver import DEFAULT_OMEGA, InfeasibleError, Solution, SolveRequest, solve_ee, solve_pecc

log = logging.getLogger(__name__)

# Slack on the re-solve clock so k * dt lands on k * delta despite rounding.
_CLOCK_SLACK = 1e-9


class Mode(enum.Enum):
    PECC_0 = "pecc0"
    PECC_DELTA = "pecc_delta"
    EE = "ee"
    FIXED = "fixed"


@dataclass(frozen=True)
class ControllerConfig:
    mode: Mode
    rd_des: float = 0.5                 # m
    delta: float = 10.0                 # s, PECC-delta only
    omega: float = DEFAULT_OMEGA        # 1/(J/m)
    solve_latency: float = 0.0          # s between a solve and its pair taking effect
    fixed_pair: Optional[ControlPair] = None

    def __post_init__(self):
        if self.mode is Mode.PECC_DELTA and not self.delta > 0:
            raise ValueError(f"delta must be positive for PECC-delta, got {self.delta}")
        if self.mode is Mode.FIXED and self.fixed_pair is None:
            raise ValueError("fixed mode needs fixed_pair")
        if self.rd_des <= 0:
            raise ValueError(f"rd_des must be positive, got {self.rd_des}")
        if self.solve_latency < 0:
            raise ValueError("solve_latency must be non-negative")

    @property
    def label(self) -> str:
        if self.mode is Mode.PECC_DELTA:
            return f"PECC-{self.delta:g}"
        if self.mode is Mode.FIXED:
            return f"FIXED{self.fixed_pair}"
        return {Mode.PECC_0: "PECC-0", Mode.EE: "EE"}[self.mode]

    @classmethod
    def from_label(cls, label: str, **kwargs) -> "ControllerConfig":
        """Parse ``EE``, ``PECC-0`` or ``PECC-<delta>``."""
        norm = label.strip().upper()
        if norm == "EE":
            return cls(Mode.EE, **kwargs)
        if norm == "PECC-0":
            return cls(Mode.PECC_0, **kwargs)
        if norm.startswith("PECC-"):
            try:
                delta = float(norm[5:])
            except ValueError:
                pass
            else:
                return cls(Mode.PECC_DELTA, delta=delta, **kwargs)
        raise ValueError(f"unknown controller mode {label!r}; expected EE, PECC-0 or PECC-<delta>")


@dataclass
class BudgetLedger:
    initial_budget: float      # J
    remaining_distance: float  # m
    consumed: float = 0.0      # J

    @property
    def available(self) -> float:
        return self.initial_budget - self.consumed

    @property
    def e_bpm(self) -> float:
        """Per-meter budget for a re-solve; never negative."""
        return max(0.0, self.available) / self.remaining_distance


@dataclass(frozen=True)
class ControlDecision:
    timestamp: float  # s
    pair: ControlPair
    e_bpm_used: float  # J/m
    epsilon: float     # J/m
    effective_at: float = 0.0


SolveFn = Callable[[LookupTable, SolveRequest], Solution]


@dataclass
class ControllerState:
    config: ControllerConfig
    table: LookupTable
    ledger: BudgetLedger
    solve: SolveFn = solve_pecc
    decisions: list[ControlDecision] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    next_due: float = float("inf")
    _active: int = 0

    def current_pair(self, now: float) -> ControlPair:
        """Pair in force at ``now``, honouring the configured solve latency."""
        while (self._active + 1 < len(self.decisions)
               and self.decisions[self._active + 1].effective_at <= now + _CLOCK_SLACK):
            self._active += 1
        return self.decisions[self._active].pair

    def _decide(self, now: float, e_bpm: float) -> ControlDecision:
        cfg = self.config
        if cfg.mode is Mode.FIXED:
            sol = Solution(cfg.fixed_pair, 0.0, 0.0, self.table.record(cfg.fixed_pair).energy_per_meter,
                           self.table.record(cfg.fixed_pair).reaction_distance)
        elif cfg.mode is Mode.EE:
            sol = solve_ee(self.table, cfg.rd_des)
        else:
            sol = self.solve(self.table, SolveRequest(cfg.rd_des, e_bpm, cfg.omega))
        latency = cfg.solve_latency if self.decisions else 0.0
        decision = ControlDecision(now, sol.pair, e_bpm, sol.epsilon, effective_at=now + latency)
        self.decisions.append(decision)
        return decision

    def on_tick(self, now: float, energy_delta: float, distance_delta: float) -> Optional[ControlDecision]:
        if energy_delta < 0 or distance_delta < 0:
            raise ValueError("energy and distance deltas must be non-negative")
        ledger = self.ledger
        ledger.consumed += energy_delta
        ledger.remaining_distance = max(0.0, ledger.remaining_distance - distance_delta)
        if self.config.mode is not Mode.PECC_DELTA or now + _CLOCK_SLACK < self.next_due:
            return None
        while self.next_due <= now + _CLOCK_SLACK:
            self.next_due += self.config.delta
        if ledger.remaining_distance <= 0:
            return None
        e_bpm = ledger.e_bpm
        try:
            return self._decide(now, e_bpm)
        except InfeasibleError as exc:
            # never relax the safety bound mid-run; keep the last safe pair
            msg = f"t={now:.2f}s: re-solve failed ({exc}); keeping {self.decisions[-1].pair}"
            log.warning(msg)
            self.warnings.append(msg)
            return None

    def notify_replan(self, new_remaining_distance: float) -> None:
        if new_remaining_distance < 0:
            raise ValueError("remaining distance must be non-negative")
        self.ledger.remaining_distance = new_remaining_distance


def init_controller(config: ControllerConfig, table: LookupTable, budget: float, path_length: float,
                    solve: SolveFn = solve_pecc) -> ControllerState:
    """Set up the ledger and issue the first decision at t = 0.

    ``solve`` replaces the in-process PECC solver, e.g. with a remote client.
    """
    if not budget > 0:
        raise ValueError(f"budget must be positive, got {budget}")
    if not path_length > 0:
        raise ValueError(f"path_length must be positive, got {path_length}")
    state = ControllerState(config, table, BudgetLedger(budget, path_length), solve=solve)
    state._decide(0.0, budget / path_length)
    if config.mode is Mode.PECC_DELTA:
        state.next_due = config.delta
    return state


def on_tick(state: ControllerState, now: float, energy_delta: float,
            distance_delta: float) -> Optional[ControlDecision]:
    return state.on_tick(now, energy_delta, distance_delta)


def notify_replan(state: ControllerState, new_remaining_distance: float) -> None:
    state.notify_replan(new_remaining_distance)


def decisions_to_csv(decisions) -> str:
    out = io.StringIO()
    out.write("t_s,frequency_ghz,max_speed_mps,e_bpm_jpm,epsilon_jpm\n")
    for d in decisions:
        out.write(f"{d.timestamp:.6g},{d.pair.frequency:.6g},{d.pair.max_speed:.6g},"
                  f"{d.e_bpm_used:.6g},{d.epsilon:.6g}\n")
    return out.getvalue()
