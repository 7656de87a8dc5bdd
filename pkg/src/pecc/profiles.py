"""Operating-point grid, calibrated surrogate models and the lookup table.

The robot is characterised by three surrogates over a (frequency, max-speed)
control pair:

* power      -- bilinear in (f, s_max)
* e2e latency -- affine in s_max, scaled by f_ref / f
* stall      -- fraction of the commanded speed actually achieved, which drops
                once the e2e latency exceeds a threshold

All fitting is closed-form.  Power is expressed in "unit-W": the slowest
corner of the profiled hull is pinned at 100 and the other corners follow
the relative increases measured on the prototype.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, fields
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class DomainError(ValueError):
    """An estimator was asked about a physically meaningless operating point."""


class CalibrationError(ValueError):
    """Anchor set is incomplete or self-contradictory."""


@dataclass(frozen=True, order=True)
class ControlPair:
    frequency: float  # GHz
    max_speed: float  # m/s

    def __str__(self):
        return f"({self.frequency:g} GHz, {self.max_speed:g} m/s)"


@dataclass(frozen=True)
class Grid:
    frequencies: tuple[float, ...]
    speeds: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        object.__setattr__(self, "speeds", tuple(float(s) for s in self.speeds))
        for label, values in (("frequencies", self.frequencies), ("speeds", self.speeds)):
            if not values:
                raise ValueError(f"grid {label} must be non-empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"grid {label} must be strictly increasing: {values}")
            if values[0] <= 0:
                raise ValueError(f"grid {label} must be positive: {values}")
        steps = np.diff(self.speeds)
        if len(steps) and not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
            raise ValueError(f"grid speeds must have a constant step: {self.speeds}")

    @property
    def f_max(self) -> float:
        return self.frequencies[-1]

    @property
    def s_max(self) -> float:
        return self.speeds[-1]

    @property
    def s_min(self) -> float:
        return self.speeds[0]

    @property
    def speed_step(self) -> float:
        if len(self.speeds) < 2:
            return 0.0
        return (self.speeds[-1] - self.speeds[0]) / (len(self.speeds) - 1)

    def pairs(self) -> list[ControlPair]:
        """All pairs, ordered by (frequency, max_speed) ascending."""
        return [ControlPair(f, s) for f, s in itertools.product(self.frequencies, self.speeds)]

    def __contains__(self, pair) -> bool:
        return pair.frequency in self.frequencies and pair.max_speed in self.speeds


def default_grid() -> Grid:
    return Grid(
        frequencies=(1.11, 1.34, 1.57, 1.80, 2.03, 2.26),
        speeds=(0.4, 0.8, 1.2, 1.6, 2.0, 2.4),
    )


@dataclass(frozen=True)
class ModelParams:
    # power = a + b*f + c*s + d*f*s
    a: float
    b: float
    c: float
    d: float
    # e2e = (c0 + c1*s) * f_ref / f
    c0: float
    c1: float
    f_ref: float
    # eta = clamp(1 - beta_stall * max(0, e2e - tau_stall), eta_min, 1)
    tau_stall: float
    beta_stall: float
    eta_min: float = 0.5

    def __post_init__(self):
        if not (self.c0 > 0 and self.c1 > 0 and self.f_ref > 0):
            raise ValueError("latency coefficients c0, c1, f_ref must be positive")
        if not 0 < self.eta_min <= 1:
            raise ValueError("eta_min must lie in (0, 1]")
        if self.tau_stall <= 0 or self.beta_stall < 0:
            raise ValueError("tau_stall must be positive and beta_stall non-negative")

    def dumps(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def loads(cls, text: str) -> "ModelParams":
        values = {}
        known = {f.name for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in known:
                raise ValueError(f"line {lineno}: expected one of {sorted(known)} as key=value, got {raw!r}")
            try:
                values[key] = float(value)
            except ValueError:
                raise ValueError(f"line {lineno}: {key} is not a number: {value.strip()!r}") from None
        missing = known - values.keys() - {"eta_min"}
        if missing:
            raise ValueError(f"missing model parameters: {sorted(missing)}")
        return cls(**values)


def _check_pair(pair: ControlPair):
    if not pair.frequency > 0:
        raise DomainError(f"frequency must be positive, got {pair.frequency}")
    if pair.max_speed < 0:
        raise DomainError(f"max_speed must be non-negative, got {pair.max_speed}")


def estimate_e2e(pair: ControlPair, params: ModelParams) -> float:
    """End-to-end latency in seconds: sensing to updated speed command."""
    _check_pair(pair)
    return (params.c0 + params.c1 * pair.max_speed) * (params.f_ref / pair.frequency)


def estimate_reaction_distance(pair: ControlPair, params: ModelParams) -> float:
    """Distance covered at ``max_speed`` during one e2e latency period (m)."""
    return pair.max_speed * estimate_e2e(pair, params)


def estimate_power(pair: ControlPair, params: ModelParams) -> float:
    _check_pair(pair)
    f, s = pair.frequency, pair.max_speed
    return params.a + params.b * f + params.c * s + params.d * f * s


def stall_factor(pair: ControlPair, params: ModelParams) -> float:
    """Fraction of the commanded speed achieved on average.

    Long e2e latencies make the motor controller fall back to 0 m/s between
    speed commands, so the robot stops and restarts.
    """
    return stall_from_e2e(estimate_e2e(pair, params), params)


def stall_from_e2e(e2e: float, params: ModelParams) -> float:
    overshoot = max(0.0, e2e - params.tau_stall)
    return min(1.0, max(params.eta_min, 1.0 - params.beta_stall * overshoot))


# --- calibration -----------------------------------------------------------

QUANTITIES = ("power", "e2e", "avg_speed")


class Anchor(NamedTuple):
    pair: ControlPair
    quantity: str  # one of QUANTITIES
    value: float


POWER_UNIT_ANCHOR = 100.0
POWER_FREQ_RISE = 0.5587   # 1.11 -> 2.26 GHz at 0.4 m/s
POWER_SPEED_RISE = 0.6167  # 0.4 -> 2.4 m/s at fixed frequency


def published_anchors() -> list[Anchor]:
    """Measurements published for the prototype robot."""
    lo_f, hi_f, lo_s, hi_s = 1.11, 2.26, 0.4, 2.4
    p0 = POWER_UNIT_ANCHOR
    return [
        Anchor(ControlPair(lo_f, lo_s), "power", p0),
        Anchor(ControlPair(hi_f, lo_s), "power", p0 * (1 + POWER_FREQ_RISE)),
        Anchor(ControlPair(lo_f, hi_s), "power", p0 * (1 + POWER_SPEED_RISE)),
        # far corner closed by assuming the two rises compose multiplicatively
        Anchor(ControlPair(hi_f, hi_s), "power", p0 * (1 + POWER_FREQ_RISE) * (1 + POWER_SPEED_RISE)),
        Anchor(ControlPair(lo_f, lo_s), "e2e", 0.36),
        Anchor(ControlPair(lo_f, hi_s), "e2e", 1.16),
        Anchor(ControlPair(lo_f, hi_s), "avg_speed", 2.0),
        Anchor(ControlPair(lo_f, 2.0), "avg_speed", 1.8),
    ]


def _dedupe(anchors: Iterable[Anchor]) -> dict[str, list[Anchor]]:
    by_quantity: dict[str, list[Anchor]] = {q: [] for q in QUANTITIES}
    seen: dict[tuple, float] = {}
    for anchor in anchors:
        pair, quantity, value = anchor
        if quantity not in by_quantity:
            raise CalibrationError(f"unknown anchor quantity {quantity!r}; expected one of {QUANTITIES}")
        if not math.isfinite(value) or value <= 0:
            raise CalibrationError(f"{quantity} anchor at {pair} must be positive and finite, got {value}")
        key = (pair.frequency, pair.max_speed, quantity)
        if key in seen:
            if not math.isclose(seen[key], value, rel_tol=1e-9):
                raise CalibrationError(
                    f"conflicting {quantity} anchors at {pair}: {seen[key]} vs {value}")
            continue
        seen[key] = value
        by_quantity[quantity].append(Anchor(pair, quantity, float(value)))
    return by_quantity


def _solve(design: np.ndarray, target: np.ndarray, what: str) -> np.ndarray:
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise CalibrationError(f"{what} anchors are degenerate (they do not pin down every coefficient)")
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef


def calibrate(anchors: Sequence[Anchor], eta_min: float = 0.5, tolerance: float = 0.005) -> ModelParams:
    """Fit the surrogates to anchor measurements.

    Needs at least four power anchors spanning both axes and two e2e anchors
    at distinct speeds.  Two ``avg_speed`` anchors enable the stall model; with
    fewer the robot never stalls.  Over-determined sets are solved by least
    squares and then every anchor is checked against ``tolerance``.
    """
    groups = _dedupe(anchors)

    power = groups["power"]
    if len(power) < 4:
        raise CalibrationError(f"need 4 power anchors (the hull corners), got {len(power)}")
    design = np.array([[1.0, a.pair.frequency, a.pair.max_speed,
                        a.pair.frequency * a.pair.max_speed] for a in power])
    a, b, c, d = _solve(design, np.array([a.value for a in power]), "power")

    latency = groups["e2e"]
    if len(latency) < 2:
        raise CalibrationError(f"need 2 e2e anchors at distinct speeds, got {len(latency)}")
    f_ref = latency[0].pair.frequency
    # e2e * f / f_ref = c0 + c1 * s
    design = np.array([[1.0, a.pair.max_speed] for a in latency])
    target = np.array([a.value * a.pair.frequency / f_ref for a in latency])
    c0, c1 = _solve(design, target, "e2e")
    if c0 <= 0 or c1 <= 0:
        raise CalibrationError(f"e2e anchors imply non-positive coefficients c0={c0:.4g}, c1={c1:.4g}")

    params = ModelParams(float(a), float(b), float(c), float(d), float(c0), float(c1), f_ref,
                         tau_stall=1.0, beta_stall=0.0, eta_min=eta_min)

    stall = groups["avg_speed"]
    if len(stall) == 1:
        raise CalibrationError("need 2 avg_speed anchors to fit the stall model, got 1")
    if stall:
        # 1 - eta = beta * e2e - beta * tau, linear in (beta, beta * tau)
        e2e = np.array([estimate_e2e(a.pair, params) for a in stall])
        eta = np.array([a.value / a.pair.max_speed for a in stall])
        if np.any(eta > 1):
            raise CalibrationError("avg_speed anchor exceeds its max_speed")
        beta, beta_tau = _solve(np.column_stack([e2e, -np.ones_like(e2e)]), 1.0 - eta, "avg_speed")
        if beta <= 0 or beta_tau <= 0:
            raise CalibrationError(
                f"avg_speed anchors imply no latency-driven stall (beta={beta:.4g}); check their ordering")
        params = ModelParams(params.a, params.b, params.c, params.d, params.c0, params.c1, f_ref,
                             tau_stall=float(beta_tau / beta), beta_stall=float(beta), eta_min=eta_min)

    for anchor in itertools.chain.from_iterable(groups.values()):
        got = _evaluate(anchor, params)
        if abs(got - anchor.value) > tolerance * abs(anchor.value):
            raise CalibrationError(
                f"{anchor.quantity} anchor at {anchor.pair} conflicts with the rest: "
                f"fitted {got:.6g}, measured {anchor.value:.6g}")
    if any(estimate_power(p, params) <= 0 for p in _hull(power)):
        raise CalibrationError("fitted power surface is not positive over the anchor hull")
    return params


def _evaluate(anchor: Anchor, params: ModelParams) -> float:
    if anchor.quantity == "power":
        return estimate_power(anchor.pair, params)
    if anchor.quantity == "e2e":
        return estimate_e2e(anchor.pair, params)
    return anchor.pair.max_speed * stall_factor(anchor.pair, params)


def _hull(anchors: list[Anchor]) -> list[ControlPair]:
    fs = [a.pair.frequency for a in anchors]
    ss = [a.pair.max_speed for a in anchors]
    return [ControlPair(f, s) for f in (min(fs), max(fs)) for s in (min(ss), max(ss))]


def default_params() -> ModelParams:
    return calibrate(published_anchors())


def load_anchors(text: str) -> list[Anchor]:
    """Parse anchors from CSV with header ``frequency_ghz,max_speed_mps,quantity,value``."""
    reader = csv.DictReader(io.StringIO(text))
    expected = ["frequency_ghz", "max_speed_mps", "quantity", "value"]
    if reader.fieldnames != expected:
        raise CalibrationError(f"anchor file header must be {','.join(expected)}, got {reader.fieldnames}")
    anchors = []
    for lineno, row in enumerate(reader, 2):
        try:
            pair = ControlPair(float(row["frequency_ghz"]), float(row["max_speed_mps"]))
            anchors.append(Anchor(pair, row["quantity"].strip(), float(row["value"])))
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"anchor file line {lineno}: {exc}") from None
    return anchors


def dump_anchors(anchors: Iterable[Anchor]) -> str:
    out = io.StringIO()
    out.write("frequency_ghz,max_speed_mps,quantity,value\n")
    for pair, quantity, value in anchors:
        out.write(f"{pair.frequency!r},{pair.max_speed!r},{quantity},{value!r}\n")
    return out.getvalue()


# --- lookup table ----------------------------------------------------------

@dataclass(frozen=True)
class PerfRecord:
    pair: ControlPair
    power: float              # W
    e2e_latency: float        # s
    reaction_distance: float  # m
    energy_per_meter: float   # J/m

    @classmethod
    def from_estimates(cls, pair: ControlPair, power: float, e2e: float) -> "PerfRecord":
        if power <= 0 or e2e <= 0:
            raise DomainError(f"non-positive estimate at {pair}: power={power}, e2e={e2e}")
        return cls(pair, power, e2e, pair.max_speed * e2e, power / pair.max_speed)


CSV_HEADER = ("frequency_ghz", "max_speed_mps", "power_w", "e2e_s", "rd_m", "epm_jpm")


class LookupTable:
    """Precomputed estimates for every pair of a grid, in grid order."""

    def __init__(self, grid: Grid, records: Sequence[PerfRecord]):
        records = tuple(records)
        expected = grid.pairs()
        if [r.pair for r in records] != expected:
            raise ValueError("lookup table records must cover every grid pair exactly once, in grid order")
        self.grid = grid
        self.records = records
        self._index = {r.pair: i for i, r in enumerate(records)}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return isinstance(other, LookupTable) and self.grid == other.grid and self.records == other.records

    def record(self, pair: ControlPair) -> PerfRecord:
        try:
            return self.records[self._index[pair]]
        except KeyError:
            raise KeyError(f"{pair} is not on the table grid") from None

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Column arrays in record order, for vectorised scans."""
        return {
            "frequency": np.array([r.pair.frequency for r in self.records]),
            "max_speed": np.array([r.pair.max_speed for r in self.records]),
            "power": np.array([r.power for r in self.records]),
            "rd": np.array([r.reaction_distance for r in self.records]),
            "epm": np.array([r.energy_per_meter for r in self.records]),
        }

    @property
    def min_reaction_distance(self) -> float:
        return float(self.arrays["rd"].min())

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(CSV_HEADER) + "\n")
        for r in self.records:
            row = (r.pair.frequency, r.pair.max_speed, r.power, r.e2e_latency,
                   r.reaction_distance, r.energy_per_meter)
            out.write(",".join(f"{v:.6g}" for v in row) + "\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LookupTable":
        """Inverse of :meth:`to_csv`.

        Reaction distance and energy per meter are recomputed from the power
        and latency columns so the record identities stay exact.
        """
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"lookup table header must be {','.join(CSV_HEADER)}")
        rows = {}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                f, s, power, e2e = (float(v) for v in row[:4])
            except ValueError as exc:
                raise ValueError(f"lookup table line {lineno}: {exc}") from None
            pair = ControlPair(f, s)
            if pair in rows:
                raise ValueError(f"lookup table line {lineno}: duplicate pair {pair}")
            rows[pair] = PerfRecord.from_estimates(pair, power, e2e)
        grid = Grid(sorted({p.frequency for p in rows}), sorted({p.max_speed for p in rows}))
        missing = [p for p in grid.pairs() if p not in rows]
        if missing:
            raise ValueError(f"lookup table is not a full grid; missing {missing[0]} and {len(missing) - 1} more")
        return cls(grid, [rows[p] for p in grid.pairs()])


def build_lookup_table(grid: Grid, params: ModelParams) -> LookupTable:
    return LookupTable(grid, [
        PerfRecord.from_estimates(pair, estimate_power(pair, params), estimate_e2e(pair, params))
        for pair in grid.pairs()
    ])


def default_table() -> LookupTable:
    return build_lookup_table(default_grid(), default_params())
