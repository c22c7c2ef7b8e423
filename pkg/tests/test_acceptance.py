"""Acceptance suite: one test per release criterion, each printing a verdict.

Shared fixtures run the desk-scale scenario (33-bus feeder, 4 households per
bus, the case-study parameterization, both dynamic-price days) once and feed
every criterion from the same artifacts.  Run with ``pytest -s
tests/test_acceptance.py`` to see the per-criterion lines.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from p2pfair import cli, clearing, fair, fairness, grid, lp, market, report, scenario

from oracles import enumerate_micro_clearing, sorted_quantile_w1
from test_clearing import random_micro_case, wide_grid
from test_grid import all_tree_shapes, buses_from_parents, recursive_squared_voltages

SEED = 7
EPS_GRID = [0.01, 0.02, 0.05, 0.10, 0.20, 0.50, 0.70, 1.00]
TOL = 0.01


def _passed(name, start):
    print(f"\nACCEPTANCE {name}: PASS ({time.perf_counter() - start:.1f}s)")


# --------------------------------------------------------------------------
# shared desk-scale runs
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_days():
    """Reference clearings for both price days at desk scale."""
    days = {}
    for day in ("high", "low"):
        spec = scenario.ScenarioSpec(peers_per_bus=4, seed=SEED, dynamic_prices=day)
        scn = scenario.generate(spec)
        active = scenario.market_active_slots(scn)
        slots = {}
        for h in active:
            peers = scn.peers_by_hour[h]
            bm = market.build_bid_match(peers)
            sol = clearing.clear_reference(peers, scn.grid, bm)
            assert sol.is_optimal, f"{day} {h}: {sol.status}"
            rep = fairness.unfairness(
                fairness.trade_distribution(sol.transactions, scn.partition)
            )
            slots[h] = (peers, bm, sol, rep)
        days[day] = (scn, active, slots)
    return days


@pytest.fixture(scope="module")
def eps_sweep_results(desk_days):
    """Chained-warm-start sacrifice sweep on every active slot of the low day."""
    scn, active, slots = desk_days["low"]
    results = {}
    for h in active:
        peers, bm, sol, rep = slots[h]
        outs = fair.epsilon_sweep(
            peers, scn.grid, bm, scn.partition, sol, EPS_GRID, tol=TOL
        )
        results[h] = outs
    return results


@pytest.fixture(scope="module")
def pv_sweep_results(desk_days):
    """Fair runs at full sacrifice across community-plant capacities.

    The plant is present (inert) at zero capacity, so the trade matrices stay
    conformable and each capacity warm-starts from the previous one's trades,
    the same chaining the sacrifice sweep uses.
    """
    scn, active, slots = desk_days["low"]
    scale = scn.n_peers / 1600.0
    capacities = [0.0, 5.0 * scale, 10.0 * scale, 15.0 * scale, 20.0 * scale]
    by_cap = {}
    warm = {h: None for h in active}
    for cap in capacities:
        wscn = scenario.add_community_pv(scn, bus=12, capacity_kw=cap)
        runs = {}
        for h in active:
            peers = wscn.peers_by_hour[h]
            bm = market.build_bid_match(peers)
            ref = clearing.clear_reference(peers, wscn.grid, bm)
            assert ref.is_optimal
            inputs = fair.FairModelInputs.from_reference(
                peers, wscn.grid, bm, wscn.partition, ref, 1.0
            )
            out = fair.alternating_solve(inputs, tol=TOL, warm_start=warm[h])
            warm[h] = out.transactions
            runs[h] = (inputs, out)
        by_cap[cap] = runs
    return capacities, by_cap


# --------------------------------------------------------------------------
# criteria
# --------------------------------------------------------------------------


def test_criterion_1_transport_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2025)
    for _ in range(200):
        m, n = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        a = fairness.TradeDistribution("a", rng.uniform(0, 100, m), tuple(range(m)))
        b = fairness.TradeDistribution("b", rng.uniform(0, 100, n), tuple(range(n)))
        w_lp, plan = fairness.wasserstein_lp(a, b)
        w_sorted = fairness.wasserstein_sorted_oracle(a, b)
        assert abs(w_lp - w_sorted) <= 1e-6
        assert abs(w_sorted - sorted_quantile_w1(a.totals, b.totals)) <= 1e-9
        plan.check_marginals()
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"oracle equivalence took {elapsed:.1f}s"
    _passed("1 (transport oracle equivalence)", start)


def test_criterion_2_micro_clearing_enumeration():
    start = time.perf_counter()
    rng = np.random.default_rng(4242)
    g = wide_grid()
    for _ in range(50):
        peers = random_micro_case(rng)
        bm = market.build_bid_match(peers)
        sol = clearing.clear_reference(peers, g, bm)
        assert sol.is_optimal
        oracle = enumerate_micro_clearing(peers, bm.feasible, bm.trade_cap)
        assert abs(sol.objective - oracle) <= 1e-6
        for i, j in zip(*np.nonzero(sol.transactions > 1e-9)):
            assert peers[i].ask <= peers[j].bid
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"micro clearing took {elapsed:.1f}s"
    _passed("2 (micro clearing vs enumeration)", start)


def test_criterion_3_voltage_model_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    count = 0
    for n in range(1, 6):
        for parents in all_tree_shapes(n):
            buses = buses_from_parents(parents, rng)
            g = grid.build_grid(buses)
            p = rng.normal(scale=0.4, size=n)
            q = rng.normal(scale=0.4, size=n)
            v = grid.voltage_profile(g, p, q)
            expect = recursive_squared_voltages(
                buses, g.v0,
                {b: p[g.bus_index(b)] for b in g.bus_ids},
                {b: q[g.bus_index(b)] for b in g.bus_ids},
            )
            for b in g.bus_ids:
                assert abs(v[g.bus_index(b)] - expect[b]) <= 1e-10
            count += 1
    assert count == 153  # every rooted tree shape on up to 6 buses
    _passed("3 (voltage model vs recursive evaluation)", start)


def test_criterion_4_desk_scale_unfairness_reproduction(desk_days):
    start = time.perf_counter()
    argmax_by_day = {}
    for day, (scn, active, slots) in desk_days.items():
        assert scn.n_peers == 132
        # active only in a contiguous midday window
        assert active == list(range(active[0], active[-1] + 1))
        assert 8 <= active[0] and active[-1] <= 18
        totals = {}
        for h in active:
            rep = slots[h][3]
            assert rep.d_max > 0.0, f"{day} {h:02d}:00 cleared perfectly fair"
            for pair, w in rep.distances.items():
                totals[pair] = totals.get(pair, 0.0) + w
        argmax_by_day[day] = max(totals, key=lambda k: totals[k])
    assert argmax_by_day["high"] == ("R", "P")
    assert argmax_by_day["low"] == ("R", "M")
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    _passed("4 (two-day unfairness pattern, arg-max pair flips)", start)


def test_criterion_5_sacrifice_sweep_monotone_with_plateau(desk_days, eps_sweep_results):
    start = time.perf_counter()
    _, active, slots = desk_days["low"]
    plateau_slots = 0
    for h in active:
        outs = eps_sweep_results[h]
        assert all(o.error is None for o in outs)
        d_ref = slots[h][3].d_max
        d = [o.d_max for o in outs]
        for a, b in zip(d, d[1:]):
            assert b <= a + TOL, f"slot {h}: not monotone ({a:.4f} -> {b:.4f})"
        assert all(v <= d_ref + TOL for v in d)
        # a plateau: some level beyond which the slot never improves by > tol
        if any(d[k] - min(d[k + 1:]) <= TOL for k in range(len(d) - 1)):
            plateau_slots += 1
    assert plateau_slots >= 1, "no slot reached its attainable-fairness limit"
    elapsed = time.perf_counter() - start
    assert elapsed < 1800.0
    _passed(f"5 (sacrifice sweep monotone, {plateau_slots} slots plateau)", start)


def test_criterion_6_fair_constraint_audit(desk_days, eps_sweep_results, pv_sweep_results):
    start = time.perf_counter()
    scn, active, slots = desk_days["low"]
    audited = 0
    for h in active:
        peers, bm, ref_sol, _ = slots[h]
        for eps, out in zip(EPS_GRID, eps_sweep_results[h]):
            inputs = fair.FairModelInputs.from_reference(
                peers, scn.grid, bm, scn.partition, ref_sol, eps
            )
            assert fair.audit_fair_outcome(out, inputs, feas_tol=1e-6) == []
            audited += 1
    _, by_cap = pv_sweep_results
    for cap, runs in by_cap.items():
        for h, (inputs, out) in runs.items():
            assert fair.audit_fair_outcome(out, inputs, feas_tol=1e-6) == []
            audited += 1
    _passed(f"6 (constraint audit clean on {audited} fair runs)", start)


def test_criterion_7_community_pv_monotonicity(pv_sweep_results):
    start = time.perf_counter()
    capacities, by_cap = pv_sweep_results
    day_totals = []
    for cap in capacities:
        day_totals.append(sum(out.d_max for _, out in by_cap[cap].values()))
    for a, b in zip(day_totals, day_totals[1:]):
        assert b <= a + TOL, f"pv sweep not monotone: {day_totals}"
    assert day_totals[-1] < day_totals[0], "plant capacity had no effect"
    elapsed = time.perf_counter() - start
    assert elapsed < 1800.0
    _passed(f"7 (community pv monotone: {['%.2f' % t for t in day_totals]})", start)


def test_criterion_8_alternating_contract(desk_days, eps_sweep_results, pv_sweep_results, tmp_path):
    start = time.perf_counter()
    scn = desk_days["low"][0]
    _, by_cap = pv_sweep_results
    all_runs = [
        (scn.partition, out)
        for outs in eps_sweep_results.values() for out in outs
    ]
    for cap, runs in by_cap.items():
        for h, (inputs, out) in runs.items():
            all_runs.append((inputs.partition, out))
    checked = 0
    for k, (partition, out) in enumerate(all_runs):
        assert out.iterations <= 15
        last = out.trace[-1]
        assert out.converged == (abs(last.d1 - last.d2) <= TOL)
        dists = fairness.trade_distribution(out.transactions, partition)
        oracle = max(
            fairness.wasserstein_sorted_oracle(a, b)
            for a, b in itertools.combinations(dists, 2)
        )
        assert abs(out.d_max - oracle) <= TOL + 1e-6
        trace_path = tmp_path / f"trace_{k}.tsv"
        report.export_trace(trace_path, out)
        rows, _ = report.import_trace(trace_path)
        assert len(rows) == out.iterations
        checked += 1
    _passed(f"8 (alternating contract on {checked} runs)", start)


def test_criterion_9_byte_identical_reruns(tmp_path):
    start = time.perf_counter()
    spec = scenario.ScenarioSpec(peers_per_bus=4, seed=SEED, dynamic_prices="low")
    spec_file = tmp_path / "desk.json"
    spec_file.write_text(spec.to_json(), encoding="utf-8")
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        code = cli.main([
            "clear-fair", "--scenario", str(spec_file), "--out", str(out),
            "--hours", "12..13", "--epsilon", "20",
        ])
        assert code == cli.EXIT_OK
    compared = 0
    for path in sorted(outs[0].rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(outs[0])
        if rel.name.endswith(".trace.tsv") or rel.name == "timing.tsv":
            continue  # wall-clock columns are inherently non-reproducible
        assert (outs[1] / rel).read_bytes() == path.read_bytes(), rel
        compared += 1
    assert compared >= 8
    _passed(f"9 (byte-identical reruns, {compared} files)", start)
