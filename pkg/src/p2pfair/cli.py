"""Command-line simulator: clear markets, sweep parameters, build tables.

Commands write a self-contained run directory: the resolved scenario (spec,
roster, per-slot peers, grid), per-slot solution files, iteration traces for
fair runs, and derived tables.  ``report`` rebuilds every table from the
exported files alone, which keeps the tables honest.

Exit codes: 0 success, 2 bad input, 3 infeasible clearing model,
4 alternating run hit the iteration cap without converging.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import clearing, fair, fairness, market, report, scenario

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGENCE = 4

DEFAULT_EPS_GRID = "1,2,5,10,20,50,70,100"
DEFAULT_PV_CAPACITIES = "0,5,10,15,20"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_scenario(args) -> scenario.Scenario:
    source = args.scenario
    if source in ("high", "low"):
        spec = scenario.ScenarioSpec(dynamic_prices=source)
    else:
        path = Path(source)
        if not path.exists():
            raise CliError(f"scenario file not found: {source}", EXIT_BAD_INPUT)
        try:
            spec = scenario.ScenarioSpec.from_file(path)
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"bad scenario file: {exc}", EXIT_BAD_INPUT) from exc
    if args.seed is not None:
        spec.seed = args.seed
    try:
        return scenario.generate(spec)
    except ValueError as exc:
        raise CliError(f"bad scenario: {exc}", EXIT_BAD_INPUT) from exc


def _parse_hours(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        lo, hi = text.split("..")
        hours = list(range(int(lo), int(hi) + 1))
    except ValueError as exc:
        raise CliError(f"bad --hours range {text!r}, expected A..B", EXIT_BAD_INPUT) from exc
    if not hours or hours[0] < 0 or hours[-1] > 23:
        raise CliError(f"--hours out of range: {text}", EXIT_BAD_INPUT)
    return hours


def _active_slots(scn: scenario.Scenario, hours: list[int] | None) -> list[int]:
    active = scenario.market_active_slots(scn)
    if hours is not None:
        active = [h for h in active if h in hours]
    return active


def _clear_slot(scn: scenario.Scenario, h: int):
    peers = scn.peers_by_hour[h]
    bm = market.build_bid_match(peers, scn.spec.slot_hours)
    sol = clearing.clear_reference(peers, scn.grid, bm, scn.spec.slot_hours)
    if not sol.is_optimal:
        raise CliError(f"reference clearing at {h:02d}:00 ended {sol.status}", EXIT_INFEASIBLE)
    return peers, bm, sol


def _slot_report(sol, partition) -> fairness.UnfairnessReport:
    dists = fairness.trade_distribution(sol.transactions, partition)
    return fairness.unfairness(dists)


def _write_reference(out: Path, scn, slots):
    """Clear all slots, export solutions and the unfairness table."""
    ref_dir = out / "reference"
    ref_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for h in slots:
        peers, bm, sol = _clear_slot(scn, h)
        ledger = clearing.compute_revenue(sol, peers, scn.partition)
        clearing.export_solution(ref_dir / f"slot_{h:02d}.solution.tsv", sol, ledger)
        dists = fairness.trade_distribution(sol.transactions, scn.partition)
        report.write_distribution_data(ref_dir / f"slot_{h:02d}.distributions.tsv", dists)
        results[h] = (peers, bm, sol)
    reports = {h: None for h in range(24)}
    for h, (_, _, sol) in results.items():
        reports[h] = _slot_report(sol, scn.partition)
    table = report.unfairness_table(reports, scn.partition.pairs())
    report.write_summary(table, ref_dir / "unfairness.tsv")
    return results


def cmd_clear_ref(args) -> int:
    scn = _load_scenario(args)
    out = Path(args.out)
    scenario.export_scenario(scn, out / "scenario")
    slots = _active_slots(scn, _parse_hours(args.hours))
    _write_reference(out, scn, slots)
    print(f"cleared {len(slots)} active slot(s) -> {out / 'reference'}")
    return EXIT_OK


def _fair_run(scn, h, peers, bm, ref_sol, eps, tol, max_iter, warm=None):
    inputs = fair.FairModelInputs.from_reference(
        peers, scn.grid, bm, scn.partition, ref_sol, eps, scn.spec.slot_hours
    )
    try:
        return fair.alternating_solve(inputs, tol=tol, iter_cap=max_iter, warm_start=warm)
    except fair.FairModelError as exc:
        raise CliError(f"fair clearing at {h:02d}:00: {exc}", EXIT_INFEASIBLE) from exc


def _export_fair(dir_: Path, h: int, outcome, peers, partition):
    dir_.mkdir(parents=True, exist_ok=True)
    ledger = clearing.compute_revenue(outcome.solution, peers, partition)
    clearing.export_solution(dir_ / f"slot_{h:02d}.solution.tsv", outcome.solution, ledger)
    report.export_trace(dir_ / f"slot_{h:02d}.trace.tsv", outcome)


def cmd_clear_fair(args) -> int:
    scn = _load_scenario(args)
    eps = args.epsilon / 100.0
    if not 0.0 <= eps <= 1.0:
        raise CliError(f"--epsilon must be in [0, 100], got {args.epsilon}", EXIT_BAD_INPUT)
    out = Path(args.out)
    scenario.export_scenario(scn, out / "scenario")
    slots = _active_slots(scn, _parse_hours(args.hours))
    results = _write_reference(out, scn, slots)
    fair_dir = out / f"fair_eps_{args.epsilon:g}"
    unconverged = 0
    reports = {h: None for h in range(24)}
    for h in slots:
        peers, bm, ref_sol = results[h]
        outcome = _fair_run(scn, h, peers, bm, ref_sol, eps, args.tol, args.max_iter)
        _export_fair(fair_dir, h, outcome, peers, scn.partition)
        dists = fairness.trade_distribution(outcome.transactions, scn.partition)
        report.write_distribution_data(fair_dir / f"slot_{h:02d}.distributions.tsv", dists)
        reports[h] = fairness.unfairness(dists)
        unconverged += not outcome.converged
    table = report.unfairness_table(reports, scn.partition.pairs())
    report.write_summary(table, fair_dir / "unfairness.tsv")
    print(f"fair clearing done for {len(slots)} slot(s) -> {fair_dir}")
    if unconverged:
        print(f"{unconverged} slot(s) hit the iteration cap", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_sweep_epsilon(args) -> int:
    scn = _load_scenario(args)
    try:
        grid_pct = [float(v) for v in args.grid.split(",") if v != ""]
    except ValueError as exc:
        raise CliError(f"bad --grid list: {args.grid}", EXIT_BAD_INPUT) from exc
    if grid_pct != sorted(grid_pct) or any(not 0 <= v <= 100 for v in grid_pct):
        raise CliError("--grid must be ascending percentages in [0, 100]", EXIT_BAD_INPUT)
    eps_list = [v / 100.0 for v in grid_pct]

    out = Path(args.out)
    scenario.export_scenario(scn, out / "scenario")
    slots = _active_slots(scn, _parse_hours(args.hours))
    results = _write_reference(out, scn, slots)

    ref_dmax: dict[int, float] = {}
    ref_secs: dict[int, float] = {}
    outcomes: dict[str, dict[int, fair.FairOutcome]] = {f"{v:g}%": {} for v in grid_pct}
    fair_secs: dict[str, dict[int, float]] = {f"{v:g}%": {} for v in grid_pct}
    failed = False
    unconverged = 0
    for h in slots:
        peers, bm, ref_sol = results[h]
        ref_dmax[h] = _slot_report(ref_sol, scn.partition).d_max
        ref_secs[h] = ref_sol.solve_seconds
        sweep = fair.epsilon_sweep(
            peers, scn.grid, bm, scn.partition, ref_sol, eps_list,
            tol=args.tol, iter_cap=args.max_iter, slot_hours=scn.spec.slot_hours,
        )
        for pct, outcome in zip(grid_pct, sweep):
            label = f"{pct:g}%"
            outcomes[label][h] = outcome
            if outcome.error is not None:
                failed = True
                continue
            _export_fair(out / f"fair_eps_{pct:g}", h, outcome, peers, scn.partition)
            fair_secs[label][h] = outcome.solution.solve_seconds
            unconverged += not outcome.converged
    table = report.sweep_table(ref_dmax, outcomes, tol=args.tol)
    report.write_summary(table, out / "sweep_epsilon.tsv")
    report.write_summary(report.timing_table(ref_secs, fair_secs), out / "timing.tsv")
    print(f"sacrifice sweep done ({len(slots)} slots x {len(eps_list)} levels) -> {out}")
    if failed:
        return EXIT_INFEASIBLE
    if unconverged:
        print(f"{unconverged} run(s) hit the iteration cap", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_sweep_pv(args) -> int:
    base = _load_scenario(args)
    try:
        capacities = [float(v) for v in args.capacities.split(",") if v != ""]
    except ValueError as exc:
        raise CliError(f"bad --capacities list: {args.capacities}", EXIT_BAD_INPUT) from exc
    if any(c < 0 for c in capacities):
        raise CliError("--capacities must be nonnegative kW", EXIT_BAD_INPUT)
    eps = args.epsilon / 100.0
    bus = args.bus
    if not base.grid.contains_bus(bus):
        raise CliError(f"--bus {bus} not present in the grid", EXIT_BAD_INPUT)

    out = Path(args.out)
    scenario.export_scenario(base, out / "scenario")
    slots = _active_slots(base, _parse_hours(args.hours))

    ref_dmax: dict[int, float] = {}
    base_results = _write_reference(out, base, slots)
    for h in slots:
        ref_dmax[h] = _slot_report(base_results[h][2], base.partition).d_max

    # the plant is present (inert at 0 kW) for every capacity, so trade
    # matrices stay conformable and runs chain warm starts across capacities
    outcomes: dict[str, dict[int, fair.FairOutcome]] = {}
    unconverged = 0
    warm: dict[int, object] = {h: None for h in slots}
    for cap in capacities:
        label = f"{cap:g}kW"
        outcomes[label] = {}
        scn = scenario.add_community_pv(base, bus, cap)
        for h in slots:
            peers = scn.peers_by_hour[h]
            bm = market.build_bid_match(peers, scn.spec.slot_hours)
            ref_sol = clearing.clear_reference(peers, scn.grid, bm, scn.spec.slot_hours)
            if not ref_sol.is_optimal:
                raise CliError(
                    f"reference with {cap:g} kW plant at {h:02d}:00 ended {ref_sol.status}",
                    EXIT_INFEASIBLE,
                )
            outcome = _fair_run(scn, h, peers, bm, ref_sol, eps, args.tol,
                                args.max_iter, warm=warm[h])
            warm[h] = outcome.transactions
            outcomes[label][h] = outcome
            _export_fair(out / f"fair_pv_{cap:g}", h, outcome, peers, scn.partition)
            unconverged += not outcome.converged
    table = report.sweep_table(
        ref_dmax, outcomes, tol=args.tol,
        title="unfairness level by community pv capacity (kWh)",
    )
    report.write_summary(table, out / "sweep_pv.tsv")
    print(f"community pv sweep done ({len(slots)} slots x {len(capacities)} sizes) -> {out}")
    if unconverged:
        print(f"{unconverged} run(s) hit the iteration cap", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_report(args) -> int:
    """Rebuild tables from exported artifacts only."""
    out = Path(args.out)
    scn_dir = out / "scenario"
    if not scn_dir.exists():
        raise CliError(f"no exported scenario under {out}", EXIT_BAD_INPUT)
    scn = scenario.import_scenario(scn_dir)
    rebuilt = []
    for sub in sorted(out.iterdir()):
        if not sub.is_dir() or not (sub.name == "reference" or sub.name.startswith("fair_")):
            continue
        reports: dict[int, fairness.UnfairnessReport | None] = {h: None for h in range(24)}
        for sol_file in sorted(sub.glob("slot_*.solution.tsv")):
            h = int(sol_file.stem.split("_")[1].split(".")[0])
            sol, _ = clearing.import_solution(sol_file)
            reports[h] = _slot_report(sol, scn.partition)
        table = report.unfairness_table(reports, scn.partition.pairs())
        report.write_summary(table, sub / "unfairness.tsv")
        rebuilt.append(sub.name)
    print(f"rebuilt unfairness tables for: {', '.join(rebuilt) if rebuilt else 'nothing'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p2pfair",
        description="peer-to-peer electricity market clearing with fair redistribution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fair_opts=False):
        p.add_argument("--scenario", default="low",
                       help="scenario JSON file, or builtin day 'high'/'low'")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--hours", default=None, help="restrict to hours A..B (inclusive)")
        p.add_argument("--out", required=True, help="output directory")
        if fair_opts:
            p.add_argument("--tol", type=float, default=fair.DEFAULT_TOL,
                           help="alternating convergence tolerance (kWh)")
            p.add_argument("--max-iter", type=int, default=fair.DEFAULT_ITER_CAP,
                           help="alternating iteration cap")

    p = sub.add_parser("clear-ref", help="reference clearing for the active slots")
    common(p)
    p.set_defaults(func=cmd_clear_ref)

    p = sub.add_parser("clear-fair", help="fair clearing at one sacrifice level")
    common(p, fair_opts=True)
    p.add_argument("--epsilon", type=float, required=True,
                   help="sacrifice level in percent (0..100)")
    p.set_defaults(func=cmd_clear_fair)

    p = sub.add_parser("sweep-epsilon", help="fair clearing over a sacrifice grid")
    common(p, fair_opts=True)
    p.add_argument("--grid", default=DEFAULT_EPS_GRID,
                   help="ascending percent levels, comma separated")
    p.set_defaults(func=cmd_sweep_epsilon)

    p = sub.add_parser("sweep-pv", help="fair clearing across community pv sizes")
    common(p, fair_opts=True)
    p.add_argument("--capacities", default=DEFAULT_PV_CAPACITIES,
                   help="plant sizes in kW, comma separated")
    p.add_argument("--bus", type=int, default=12, help="plant connection bus")
    p.add_argument("--epsilon", type=float, default=100.0,
                   help="sacrifice level in percent for the fair runs")
    p.set_defaults(func=cmd_sweep_pv)

    p = sub.add_parser("report", help="rebuild tables from an existing run directory")
    p.add_argument("--out", required=True, help="run directory to rebuild")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
