"""Command-line entry point.

Units throughout: frequency in GHz, speed in m/s, energy in J, per-meter
energy in J/m, distances in m, times in s.  Exit status is 0 on success,
1 on a domain error (infeasible request, bad calibration) and 2 on a usage
or input-format error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, profiles, service, simworld
from .controller import ControllerConfig, decisions_to_csv
from .solver import DEFAULT_OMEGA, InfeasibleError, SolveRequest, solve_ee, solve_pecc


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _params(args) -> profiles.ModelParams:
    if getattr(args, "params", None):
        try:
            return profiles.ModelParams.loads(_read(args.params))
        except ValueError as exc:
            raise UsageError(f"{args.params}: {exc}") from None
    return profiles.default_params()


def _table(args) -> profiles.LookupTable:
    if getattr(args, "table", None):
        try:
            return profiles.LookupTable.from_csv(_read(args.table))
        except ValueError as exc:
            raise UsageError(f"{args.table}: {exc}") from None
    return profiles.build_lookup_table(profiles.default_grid(), _params(args))


def cmd_calibrate(args) -> int:
    anchors = profiles.published_anchors()
    if args.anchors:
        anchors = profiles.load_anchors(_read(args.anchors))
    params = profiles.calibrate(anchors)
    _write(args.out, params.dumps())
    if args.out not in (None, "-"):
        print(params.dumps(), end="")
    return 0


def cmd_table(args) -> int:
    _write(args.out, _table(args).to_csv())
    return 0


def cmd_solve(args) -> int:
    table = _table(args)
    if args.remote:
        kind = "ee" if args.ee else "pecc"
        req = service.WireRequest(kind, args.rd, args.ebpm, args.omega)
        sol, latency = service.solve_remote(args.remote, req, timeout=args.timeout)
    elif args.ee:
        sol = solve_ee(table, args.rd)
    else:
        sol = solve_pecc(table, SolveRequest(args.rd, args.ebpm, args.omega))
    label = "energy_per_meter" if sol.kind == "ee" else "objective"
    print(f"frequency_ghz={sol.pair.frequency:g}")
    print(f"max_speed_mps={sol.pair.max_speed:g}")
    print(f"epsilon_jpm={sol.epsilon:.6g}")
    print(f"{label}={sol.objective:.6g}")
    print(f"energy_per_meter_jpm={sol.energy_per_meter_est:.6g}")
    print(f"reaction_distance_m={sol.rd_est:.6g}")
    return 0


def cmd_simulate(args) -> int:
    table = _table(args)
    params = _params(args)
    scenario = simworld.resolve_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.jittered(args.seed)
    config = ControllerConfig.from_label(args.mode, rd_des=args.rd, omega=args.omega)
    if args.budget is not None:
        budget = args.budget
    else:
        low, med, high = simworld.make_budgets(scenario, table, args.rd, args.dt, params)
        budget = {"low": low, "med": med, "high": high}[args.budget_level]
    result = simworld.simulate(scenario, config, table, budget, args.dt, args.timeout, params)
    if args.trace:
        _write(args.trace, simworld.trace_to_csv(result.trace))
    if args.decisions:
        _write(args.decisions, decisions_to_csv(result.decisions))
    print(f"scenario={result.scenario} mode={result.controller_mode} rd_m={result.rd_des:g}")
    print(f"budget_j={result.budget:.6g}")
    print(f"travel_time_s={result.travel_time:.6g}")
    print(f"energy_j={result.energy_consumed:.6g}")
    print(f"ebu={bench.compute_ebu(result.energy_consumed, result.budget):.4f}")
    print(f"distance_m={result.distance_traveled:.6g}")
    print(f"decisions={len(result.decisions)}")
    if not result.completed:
        print(f"incomplete: timed out after {args.timeout:g} s", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    spec = bench.GridSpec.loads(_read(args.grid)) if args.grid else bench.GridSpec.default()
    if args.trials is not None:
        spec = bench.GridSpec(**{**spec.__dict__, "trials": args.trials})
    rows = bench.aggregate(bench.run_grid(spec, _table(args), _params(args), workers=args.workers),
                           k=spec.best_k)
    csv_text = bench.report(rows, "csv")
    if args.out:
        _write(args.out, csv_text)
    print(bench.report(rows, "table"))
    print(bench.format_summary(bench.summarize(rows)), end="")
    if not args.out:
        print()
        print(csv_text, end="")
    return 0


def cmd_serve(args) -> int:
    table = _table(args)
    try:
        service.serve(args.bind, table, args.omega)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pecc",
        description="Energy-budget controller for (CPU frequency, max speed) pairs of a ground robot.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def model_flags(sp, table=True):
        sp.add_argument("--params", help="model parameter file (key=value); default: built-in calibration")
        if table:
            sp.add_argument("--table", help="lookup table CSV; overrides --params")

    sp = sub.add_parser("calibrate", help="fit the surrogate models to anchor measurements")
    sp.add_argument("--anchors", help="CSV frequency_ghz,max_speed_mps,quantity,value "
                                      "(quantity: power [W], e2e [s], avg_speed [m/s])")
    sp.add_argument("--out", default="-", help="parameter file to write (default: stdout)")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("table", help="export the lookup table as CSV")
    model_flags(sp, table=False)
    sp.add_argument("--out", default="-", help="CSV file to write (default: stdout)")
    sp.set_defaults(func=cmd_table)

    sp = sub.add_parser("solve", help="pick a (frequency, max speed) pair")
    model_flags(sp)
    sp.add_argument("--rd", type=float, required=True, help="desired reaction distance [m]")
    sp.add_argument("--ebpm", type=float, default=float("inf"), help="per-meter energy budget [J/m]")
    sp.add_argument("--omega", type=float, default=DEFAULT_OMEGA, help="overrun penalty weight [1/(J/m)]")
    sp.add_argument("--ee", action="store_true", help="energy-efficient baseline instead of PECC")
    sp.add_argument("--remote", metavar="HOST:PORT", help="solve through a running solver server")
    sp.add_argument("--timeout", type=float, default=5.0, help="remote timeout [s]")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate", help="run one traversal")
    model_flags(sp)
    sp.add_argument("--scenario", default="QU",
                    help="bundled name (AB BD DA PT QU RS, ':free' for no obstacles) or YAML file")
    sp.add_argument("--mode", default="PECC-0", help="EE, PECC-0 or PECC-<delta s>")
    sp.add_argument("--rd", type=float, default=0.5, help="desired reaction distance [m]")
    budget = sp.add_mutually_exclusive_group()
    budget.add_argument("--budget", type=float, help="energy budget [J]")
    budget.add_argument("--budget-level", choices=["low", "med", "high"], default="med",
                        help="budget relative to an EE run on the obstacle-free path")
    sp.add_argument("--omega", type=float, default=DEFAULT_OMEGA, help="overrun penalty weight [1/(J/m)]")
    sp.add_argument("--seed", type=int, help="trial seed for obstacle jitter")
    sp.add_argument("--dt", type=float, default=simworld.DEFAULT_DT, help="time step [s]")
    sp.add_argument("--timeout", type=float, default=simworld.DEFAULT_TIMEOUT, help="simulated time limit [s]")
    sp.add_argument("--trace", help="write the trace CSV here")
    sp.add_argument("--decisions", help="write the decision log CSV here")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bench", help="run the evaluation grid and report RTT/EBU")
    model_flags(sp)
    sp.add_argument("--grid", help="grid spec YAML; default: bundled 3x3x3 grid")
    sp.add_argument("--out", help="metrics CSV to write")
    sp.add_argument("--trials", type=int, help="override trials per cell")
    sp.add_argument("--workers", type=int, default=1, help="worker processes")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("serve", help="serve the solver over TCP (line-delimited JSON)")
    model_flags(sp)
    sp.add_argument("--bind", default="127.0.0.1:7878", help="HOST:PORT to listen on")
    sp.add_argument("--omega", type=float, default=DEFAULT_OMEGA, help="default penalty weight [1/(J/m)]")
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"min_achievable_rd_m={exc.min_rd:.6g}", file=sys.stderr)
        return 1
    except profiles.CalibrationError as exc:
        print(f"error: calibration failed: {exc}", file=sys.stderr)
        return 1
    except (service.TransportError, service.RemoteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, bench.GridSpecError, simworld.ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
