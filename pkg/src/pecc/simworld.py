"""Discrete-time traversal of a 1-D curvilinear path.

Obstacles are abstracted as events along the path: a zone where the planner
caps the commanded speed, plus extra path length from replanning around it.
The detour is appended when the robot first enters the zone, so every later
obstacle shifts downstream by the accumulated detour.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

import numpy as np
import yaml

from .controller import ControlDecision, ControllerConfig, ControllerState, Mode, init_controller
from .profiles import ControlPair, LookupTable, ModelParams, default_params, stall_from_e2e

DEFAULT_DT = 0.05  # s
DEFAULT_TIMEOUT = 3600.0  # s
BUDGET_LEVELS = {"low": 0.95, "med": 1.15, "high": 1.35}

# Obstacle defaults when a scenario file leaves a field out.
DEFAULT_ZONE_LENGTH = 1.0
DEFAULT_SPEED_CAP = 0.4
DEFAULT_DETOUR = 0.5


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ObstacleEvent:
    position: float      # m, arc length along the base path
    zone_length: float   # m
    speed_cap: float     # m/s
    detour_extra: float  # m

    def __post_init__(self):
        if not self.zone_length > 0:
            raise ScenarioError(f"obstacle at {self.position} m: zone_length must be positive")
        if not self.speed_cap > 0:
            raise ScenarioError(f"obstacle at {self.position} m: speed_cap must be positive")
        if self.detour_extra < 0:
            raise ScenarioError(f"obstacle at {self.position} m: detour_extra must be non-negative")


@dataclass(frozen=True)
class Scenario:
    name: str
    base_length: float
    obstacles: tuple[ObstacleEvent, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(sorted(self.obstacles, key=lambda o: o.position)))
        if self.base_length < 0:
            raise ScenarioError(f"scenario {self.name}: base_length must be non-negative")
        for ob in self.obstacles:
            if not 0 <= ob.position <= self.base_length:
                raise ScenarioError(
                    f"scenario {self.name}: obstacle position {ob.position} m outside [0, {self.base_length}]")
        for prev, ob in zip(self.obstacles, self.obstacles[1:]):
            if prev.position + prev.zone_length > ob.position:
                raise ScenarioError(
                    f"scenario {self.name}: obstacle zones at {prev.position} m and {ob.position} m overlap")

    @property
    def total_length(self) -> float:
        """Path length once every detour has been taken."""
        return self.base_length + sum(o.detour_extra for o in self.obstacles)

    def without_obstacles(self) -> "Scenario":
        return replace(self, obstacles=())

    def jittered(self, trial_seed: int, position_jitter: float = 0.5,
                 detour_jitter: float = 0.25) -> "Scenario":
        """Randomly perturb obstacle placement and detour lengths.

        Positions move by up to ``position_jitter`` metres without crossing a
        neighbour's zone; detours scale by a factor in 1 +/- ``detour_jitter``.
        """
        if not self.obstacles:
            return self
        rng = np.random.default_rng([self.seed, trial_seed])
        moved = []
        prev_end = 0.0
        obs = self.obstacles
        for i, ob in enumerate(obs):
            hi_limit = obs[i + 1].position if i + 1 < len(obs) else self.base_length + ob.zone_length
            lo = max(ob.position - position_jitter, prev_end, 0.0)
            hi = min(ob.position + position_jitter, hi_limit - ob.zone_length, self.base_length)
            pos = float(rng.uniform(lo, hi)) if hi > lo else ob.position
            detour = ob.detour_extra * float(rng.uniform(1 - detour_jitter, 1 + detour_jitter))
            moved.append(replace(ob, position=pos, detour_extra=detour))
            prev_end = pos + ob.zone_length
        return replace(self, obstacles=tuple(moved))


def _require(mapping, key, where, cast=float):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing field {key!r}")
    try:
        return cast(mapping[key])
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: field {key!r} has invalid value {mapping[key]!r}") from None


def load_scenario(source: str, max_speed: Optional[float] = None) -> Scenario:
    """Parse a YAML scenario document.

    ``max_speed`` bounds obstacle speed caps when the platform limit is known.
    """
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ScenarioError(f"scenario parse error at {where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping with name, base_length_m, obstacles, seed")
    name = str(doc.get("name", "")).strip()
    if not name:
        raise ScenarioError("scenario: missing field 'name'")
    base_length = _require(doc, "base_length_m", f"scenario {name}")
    if not base_length > 0:
        raise ScenarioError(f"scenario {name}: base_length_m must be positive")
    seed = _require(doc, "seed", f"scenario {name}", int) if "seed" in doc else 0
    raw_obstacles = doc.get("obstacles") or []
    if not isinstance(raw_obstacles, list):
        raise ScenarioError(f"scenario {name}: obstacles must be a list")
    obstacles = []
    for i, raw in enumerate(raw_obstacles):
        where = f"scenario {name}, obstacle {i}"
        if not isinstance(raw, dict):
            raise ScenarioError(f"{where}: expected a mapping")
        unknown = set(raw) - {"position_m", "zone_length_m", "speed_cap_mps", "detour_extra_m"}
        if unknown:
            raise ScenarioError(f"{where}: unknown fields {sorted(unknown)}")
        ob = ObstacleEvent(
            position=_require(raw, "position_m", where),
            zone_length=_require({"v": raw.get("zone_length_m", DEFAULT_ZONE_LENGTH)}, "v", where),
            speed_cap=_require({"v": raw.get("speed_cap_mps", DEFAULT_SPEED_CAP)}, "v", where),
            detour_extra=_require({"v": raw.get("detour_extra_m", DEFAULT_DETOUR)}, "v", where),
        )
        if max_speed is not None and ob.speed_cap > max_speed:
            raise ScenarioError(f"{where}: speed_cap {ob.speed_cap} exceeds platform maximum {max_speed}")
        obstacles.append(ob)
    return Scenario(name, base_length, tuple(obstacles), seed)


def dump_scenario(scenario: Scenario) -> str:
    doc = {
        "name": scenario.name,
        "base_length_m": scenario.base_length,
        "seed": scenario.seed,
        "obstacles": [
            {"position_m": o.position, "zone_length_m": o.zone_length,
             "speed_cap_mps": o.speed_cap, "detour_extra_m": o.detour_extra}
            for o in scenario.obstacles
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


BUNDLED = ("AB", "BD", "DA", "PT", "QU", "RS")


def bundled_scenario(name: str, obstacles: bool = True) -> Scenario:
    """One of the packaged paths, with or without its obstacle events."""
    if name.upper() not in BUNDLED:
        raise ScenarioError(f"no bundled scenario {name!r}; choose from {', '.join(BUNDLED)}")
    text = resources.files("pecc.data.scenarios").joinpath(f"{name.upper()}.yaml").read_text()
    scenario = load_scenario(text)
    return scenario if obstacles else scenario.without_obstacles()


def resolve_scenario(ref: str) -> Scenario:
    """Bundled name (``QU``, ``QU:free``) or a path to a scenario file."""
    name, _, variant = ref.partition(":")
    if name.upper() in BUNDLED:
        if variant not in ("", "free", "obstacles"):
            raise ScenarioError(f"unknown scenario variant {variant!r}; use free or obstacles")
        return bundled_scenario(name, obstacles=variant != "free")
    try:
        with open(ref) as fh:
            return load_scenario(fh.read())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {ref!r}: {exc.strerror}") from None


# --- simulation ------------------------------------------------------------

@dataclass(frozen=True)
class TraceSample:
    t: float
    arc_position: float
    commanded_speed: float
    effective_speed: float
    power: float
    cumulative_energy: float


@dataclass
class RunResult:
    scenario: str
    controller_mode: str
    rd_des: float
    budget: float
    travel_time: float = 0.0
    energy_consumed: float = 0.0
    distance_traveled: float = 0.0
    decisions: list[ControlDecision] = field(default_factory=list)
    trace: list[TraceSample] = field(default_factory=list)
    completed: bool = True
    warnings: list[str] = field(default_factory=list)
    budget_level: Optional[str] = None
    trial: Optional[int] = None
    skipped_reason: Optional[str] = None

    @property
    def average_speed(self) -> float:
        return self.distance_traveled / self.travel_time if self.travel_time > 0 else 0.0


class SimState:
    """Mutable state of one traversal."""

    def __init__(self, scenario: Scenario, controller: ControllerState, table: LookupTable,
                 params: Optional[ModelParams] = None):
        self.scenario = scenario
        self.controller = controller
        self.table = table
        self.params = params or default_params()
        self.t = 0.0
        self.steps = 0
        self.position = 0.0
        self.energy = 0.0
        self.total_length = scenario.base_length
        # zone starts in arc coordinates, assuming every earlier detour is taken
        starts, offset = [], 0.0
        for ob in scenario.obstacles:
            starts.append(ob.position + offset)
            offset += ob.detour_extra
        self._zone_starts = starts
        self._next_zone = 0
        self._cache: dict[ControlPair, tuple[float, float]] = {}

    @property
    def finished(self) -> bool:
        return self.position >= self.total_length

    def _pair_terms(self, pair: ControlPair) -> tuple[float, float]:
        terms = self._cache.get(pair)
        if terms is None:
            rec = self.table.record(pair)
            terms = (rec.power, stall_from_e2e(rec.e2e_latency, self.params))
            self._cache[pair] = terms
        return terms

    def _speed_cap(self) -> float:
        obstacles = self.scenario.obstacles
        while self._next_zone < len(obstacles) and self.position >= self._zone_starts[self._next_zone]:
            ob = obstacles[self._next_zone]
            self.total_length += ob.detour_extra
            self.controller.notify_replan(max(0.0, self.total_length - self.position))
            self._next_zone += 1
        last = self._next_zone - 1
        if last >= 0 and self.position < self._zone_starts[last] + obstacles[last].zone_length:
            return obstacles[last].speed_cap
        return math.inf

    def step(self, dt: float = DEFAULT_DT) -> TraceSample:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        pair = self.controller.current_pair(self.t)
        power, eta = self._pair_terms(pair)
        commanded = min(pair.max_speed, self._speed_cap())
        effective = commanded * eta
        remaining = self.total_length - self.position
        if effective * dt >= remaining:
            # final partial step lands exactly on the goal
            used = remaining / effective
            moved = remaining
            self.position = self.total_length
            self.t = self.steps * dt + used
        else:
            used = dt
            moved = effective * dt
            self.position += moved
            self.steps += 1
            self.t = self.steps * dt
        energy = power * used
        self.energy += energy
        self.controller.on_tick(self.t, energy, moved)
        return TraceSample(self.t, self.position, commanded, effective, power, self.energy)


def step(state: SimState, dt: float = DEFAULT_DT) -> TraceSample:
    return state.step(dt)


def run(scenario: Scenario, controller: ControllerState, table: LookupTable, dt: float = DEFAULT_DT,
        timeout: float = DEFAULT_TIMEOUT, params: Optional[ModelParams] = None,
        record_trace: bool = True) -> RunResult:
    """Drive ``controller`` along ``scenario`` until the goal or ``timeout``.

    A timed-out run comes back with ``completed=False`` rather than raising.
    """
    if not timeout > 0:
        raise ValueError("timeout must be positive")
    state = SimState(scenario, controller, table, params)
    trace = []
    while not state.finished and state.t < timeout:
        sample = state.step(dt)
        if record_trace:
            trace.append(sample)
    cfg = controller.config
    return RunResult(
        scenario=scenario.name,
        controller_mode=cfg.label,
        rd_des=cfg.rd_des,
        budget=controller.ledger.initial_budget,
        travel_time=state.t,
        energy_consumed=state.energy,
        distance_traveled=state.position,
        decisions=list(controller.decisions),
        trace=trace,
        completed=state.finished,
        warnings=list(controller.warnings),
    )


def simulate(scenario: Scenario, config: ControllerConfig, table: LookupTable, budget: float,
             dt: float = DEFAULT_DT, timeout: float = DEFAULT_TIMEOUT,
             params: Optional[ModelParams] = None, record_trace: bool = True) -> RunResult:
    """Convenience wrapper: build the controller for ``scenario`` and run it."""
    controller = init_controller(config, table, budget, max(scenario.base_length, 1e-9))
    return run(scenario, controller, table, dt, timeout, params, record_trace)


def make_budgets(scenario: Scenario, table: LookupTable, rd_des: float, dt: float = DEFAULT_DT,
                 params: Optional[ModelParams] = None) -> tuple[float, float, float]:
    """Low/medium/high budgets scaled from an EE run on the obstacle-free path."""
    free = scenario.without_obstacles()
    result = simulate(free, ControllerConfig(Mode.EE, rd_des=rd_des), table, budget=1.0, dt=dt,
                      params=params, record_trace=False)
    e_ee = result.energy_consumed
    return tuple(BUDGET_LEVELS[level] * e_ee for level in ("low", "med", "high"))


def trace_to_csv(trace) -> str:
    out = io.StringIO()
    out.write("t_s,pos_m,cmd_mps,eff_mps,power_w,energy_j\n")
    for s in trace:
        out.write(f"{s.t:.6g},{s.arc_position:.6g},{s.commanded_speed:.6g},"
                  f"{s.effective_speed:.6g},{s.power:.6g},{s.cumulative_energy:.6g}\n")
    return out.getvalue()
