"""Evaluation grid: scenarios x reaction distances x budgets x controllers x trials.

Metrics per cell:

* RTT -- mean of the best-k EE travel times over the mean of the best-k
  travel times of the controller under test (> 1 means faster than EE)
* EBU -- energy consumed over the allocated budget, averaged over trials
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import yaml

from .controller import ControllerConfig, Mode
from .profiles import LookupTable, ModelParams
from .simworld import (BUDGET_LEVELS, DEFAULT_DT, RunResult, ScenarioError, make_budgets,
                       resolve_scenario, simulate)
from .solver import DEFAULT_OMEGA, InfeasibleError

LEVEL_ORDER = {name: i for i, name in enumerate(BUDGET_LEVELS)}
CSV_HEADER = ("scenario,mode,rd_m,budget_level,budget_j,mean_tt_s,best3_tt_s,"
              "mean_energy_j,rtt,ebu,skipped_reason")


class GridSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    scenarios: tuple[str, ...] = ("PT", "QU", "RS")
    rd_values: tuple[float, ...] = (0.25, 0.5, 0.75)
    budget_levels: tuple[str, ...] = ("low", "med", "high")
    modes: tuple[str, ...] = ("EE", "PECC-0", "PECC-10")
    trials: int = 25
    base_seed: int = 0
    omega: float = DEFAULT_OMEGA
    dt: float = DEFAULT_DT
    best_k: int = 3

    def __post_init__(self):
        for name in ("scenarios", "rd_values", "budget_levels", "modes"):
            value = getattr(self, name)
            if isinstance(value, (str, bytes)) or not value:
                raise GridSpecError(f"{name} must be a non-empty list")
            object.__setattr__(self, name, tuple(value))
        if self.trials < 1:
            raise GridSpecError("trials must be at least 1")
        if any(r <= 0 for r in self.rd_values) or list(self.rd_values) != sorted(set(self.rd_values)):
            raise GridSpecError("rd_values must be positive and strictly ascending")
        unknown = set(self.budget_levels) - set(BUDGET_LEVELS)
        if unknown:
            raise GridSpecError(f"unknown budget levels {sorted(unknown)}; use {list(BUDGET_LEVELS)}")
        for label in self.modes:
            try:
                ControllerConfig.from_label(label)
            except ValueError as exc:
                raise GridSpecError(str(exc)) from None
        if self.best_k < 1:
            raise GridSpecError("best_k must be at least 1")

    @classmethod
    def loads(cls, text: str) -> "GridSpec":
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise GridSpecError(f"grid spec parse error: {exc}") from None
        if not isinstance(doc, dict):
            raise GridSpecError("grid spec must be a mapping")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise GridSpecError(f"unknown grid spec fields {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise GridSpecError(f"invalid grid spec: {exc}") from None

    @classmethod
    def default(cls) -> "GridSpec":
        return cls.loads(resources.files("pecc.data").joinpath("grid_default.yaml").read_text())


def _run_block(args) -> list[RunResult]:
    """All cells for one (scenario, rd) pair; budgets are derived once per block."""
    spec, table, params, scenario_ref, rd = args
    scenario = resolve_scenario(scenario_ref)
    results = []

    def skipped(level, budget, mode, trial, reason):
        return RunResult(scenario.name, mode, rd, budget, completed=False, budget_level=level,
                         trial=trial, skipped_reason=reason)

    try:
        budgets = dict(zip(("low", "med", "high"), make_budgets(scenario, table, rd, spec.dt, params)))
    except InfeasibleError as exc:
        return [skipped(level, math.nan, mode, trial, str(exc))
                for level in spec.budget_levels for mode in spec.modes for trial in range(spec.trials)]

    for level in spec.budget_levels:
        budget = budgets[level]
        for mode in spec.modes:
            config = ControllerConfig.from_label(mode, rd_des=rd, omega=spec.omega)
            for trial in range(spec.trials):
                variant = scenario.jittered(spec.base_seed + trial)
                try:
                    result = simulate(variant, config, table, budget, spec.dt, params=params,
                                      record_trace=False)
                except InfeasibleError as exc:
                    results.append(skipped(level, budget, mode, trial, str(exc)))
                    continue
                result.controller_mode = mode
                result.budget_level = level
                result.trial = trial
                results.append(result)
    return results


def run_grid(spec: GridSpec, table: LookupTable, params: Optional[ModelParams] = None,
             workers: int = 1) -> list[RunResult]:
    """Run every cell of the grid.

    Blocks are independent, so ``workers > 1`` fans them out to processes;
    the output order is the grid order either way.
    """
    blocks = [(spec, table, params, sc, rd) for sc in spec.scenarios for rd in spec.rd_values]
    try:
        for _, _, _, sc, _ in blocks:
            resolve_scenario(sc)
    except ScenarioError as exc:
        raise GridSpecError(str(exc)) from None
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_block, blocks))
    else:
        chunks = [_run_block(b) for b in blocks]
    return [r for chunk in chunks for r in chunk]


def compute_rtt(ee_times: Sequence[float], pecc_times: Sequence[float], k: int = 3) -> float:
    if not ee_times or not pecc_times:
        raise ValueError("RTT needs at least one travel time on each side")
    if not 1 <= k <= min(len(ee_times), len(pecc_times)):
        raise ValueError(f"k={k} exceeds the number of runs ({len(ee_times)}, {len(pecc_times)})")
    return _best_k_mean(ee_times, k) / _best_k_mean(pecc_times, k)


def _best_k_mean(values: Sequence[float], k: int) -> float:
    best = sorted(values)[:k]
    return sum(best) / len(best)


def compute_ebu(energy_consumed: float, budget: float) -> float:
    if not budget > 0:
        raise ValueError(f"budget must be positive, got {budget}")
    return energy_consumed / budget


@dataclass
class MetricRow:
    scenario: str
    mode: str
    rd_des: float
    budget_level: str
    budget: float
    mean_travel_time: float = math.nan
    best_travel_time: float = math.nan  # mean of the best-k runs
    mean_energy: float = math.nan
    rtt: float = math.nan
    ebu: float = math.nan
    skipped_reason: str = ""
    runs: list[RunResult] = field(default_factory=list, repr=False)

    @property
    def skipped(self) -> bool:
        return bool(self.skipped_reason)


def _mode_key(mode: str):
    cfg = ControllerConfig.from_label(mode)
    rank = {Mode.EE: 0, Mode.PECC_0: 1, Mode.PECC_DELTA: 2}[cfg.mode]
    return (rank, cfg.delta if cfg.mode is Mode.PECC_DELTA else 0.0)


def _row_key(row: MetricRow):
    return (row.scenario, LEVEL_ORDER[row.budget_level], row.rd_des, _mode_key(row.mode))


def aggregate(results: Sequence[RunResult], k: int = 3) -> list[MetricRow]:
    """One row per (scenario, mode, rd, budget level), in report order."""
    cells: dict[tuple, list[RunResult]] = {}
    for r in results:
        cells.setdefault((r.scenario, r.controller_mode, r.rd_des, r.budget_level), []).append(r)

    rows = {}
    for (scenario, mode, rd, level), runs in cells.items():
        row = MetricRow(scenario, mode, rd, level, runs[0].budget, runs=runs)
        reasons = sorted({r.skipped_reason for r in runs if r.skipped_reason})
        incomplete = [r for r in runs if not r.skipped_reason and not r.completed]
        if reasons:
            row.skipped_reason = reasons[0]
        elif incomplete:
            row.skipped_reason = f"{len(incomplete)} run(s) timed out"
        else:
            times = [r.travel_time for r in runs]
            row.mean_travel_time = sum(times) / len(times)
            row.best_travel_time = _best_k_mean(times, min(k, len(times)))
            row.mean_energy = sum(r.energy_consumed for r in runs) / len(runs)
            row.ebu = sum(compute_ebu(r.energy_consumed, r.budget) for r in runs) / len(runs)
        rows[(scenario, mode, rd, level)] = row

    for (scenario, mode, rd, level), row in rows.items():
        ee = rows.get((scenario, "EE", rd, level))
        if row.skipped:
            continue
        if ee is None or ee.skipped:
            row.skipped_reason = "no EE reference for RTT"
            continue
        ee_times = [r.travel_time for r in ee.runs]
        times = [r.travel_time for r in row.runs]
        row.rtt = compute_rtt(ee_times, times, min(k, len(ee_times), len(times)))

    return sorted(rows.values(), key=_row_key)


def _fmt(value: float) -> str:
    return "" if isinstance(value, float) and math.isnan(value) else f"{value:.6g}"


def report(rows: Sequence[MetricRow], format: str = "csv") -> str:
    if not rows:
        raise ValueError("nothing to report")
    rows = sorted(rows, key=_row_key)
    if format == "csv":
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for r in rows:
            fields = (r.scenario, r.mode, _fmt(r.rd_des), r.budget_level, _fmt(r.budget),
                      _fmt(r.mean_travel_time), _fmt(r.best_travel_time), _fmt(r.mean_energy),
                      _fmt(r.rtt), _fmt(r.ebu), r.skipped_reason.replace(",", ";"))
            out.write(",".join(fields) + "\n")
        return out.getvalue()
    if format == "table":
        return _table(rows)
    raise ValueError(f"unknown report format {format!r}; use csv or table")


def _table(rows: Sequence[MetricRow]) -> str:
    head = f"{'mode':<10}{'rd_m':>6}{'budget_j':>11}{'best3_tt_s':>12}{'mean_tt_s':>11}{'rtt':>8}{'ebu':>8}"
    lines = []
    group = None
    for r in rows:
        key = (r.scenario, r.budget_level)
        if key != group:
            if group is not None:
                lines.append("")
            lines.append(f"[{r.scenario}] budget={r.budget_level}")
            lines.append(head)
            group = key
        if r.skipped:
            lines.append(f"{r.mode:<10}{r.rd_des:>6.2f}  skipped: {r.skipped_reason}")
            continue
        lines.append(f"{r.mode:<10}{r.rd_des:>6.2f}{r.budget:>11.1f}{r.best_travel_time:>12.2f}"
                     f"{r.mean_travel_time:>11.2f}{r.rtt:>8.3f}{r.ebu:>8.3f}")
    return "\n".join(lines) + "\n"


def summarize(rows: Sequence[MetricRow]) -> dict[str, dict[str, float]]:
    """Per-mode means of RTT and EBU over the non-skipped cells."""
    out: dict[str, dict[str, float]] = {}
    for mode in sorted({r.mode for r in rows}, key=_mode_key):
        live = [r for r in rows if r.mode == mode and not r.skipped]
        if live:
            out[mode] = {
                "rtt": sum(r.rtt for r in live) / len(live),
                "ebu": sum(r.ebu for r in live) / len(live),
                "cells": len(live),
            }
    return out


def format_summary(summary: dict[str, dict[str, float]]) -> str:
    lines = [f"{'mode':<10}{'cells':>6}{'mean_rtt':>10}{'mean_ebu':>10}"]
    for mode, s in summary.items():
        lines.append(f"{mode:<10}{s['cells']:>6}{s['rtt']:>10.3f}{s['ebu']:>10.3f}")
    return "\n".join(lines) + "\n"
