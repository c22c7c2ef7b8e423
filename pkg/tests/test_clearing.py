import numpy as np
import pytest

from p2pfair import clearing, grid, lp, market

from oracles import enumerate_micro_clearing


def wide_grid(n_buses=1, base_kva=1e6):
    buses = [grid.Bus(0, None)]
    for b in range(1, n_buses + 1):
        buses.append(grid.Bus(b, b - 1, r=0.01, x=0.01))
    return grid.build_grid(buses, v_lo=0.5, v_hi=1.5, base_kva=base_kva)


def peer(pid, bus=1, c=0.0, e=0.0, ask=0.1417, bid=0.0, retail=0.2, buyback=0.1417,
         group="all", pv_kw=0.0, actor=False):
    return market.Peer(pid, bus, c, e, ask, bid, retail, buyback,
                       group=group, pv_kw=pv_kw, is_pv_actor=actor)


def three_peer_case():
    peers = [
        peer(0, e=2.0, ask=0.15, pv_kw=5.0, group="s"),
        peer(1, c=1.0, bid=0.18, retail=0.18, group="b1"),
        peer(2, c=1.0, bid=0.16, retail=0.16, group="b2"),
    ]
    g = wide_grid()
    bm = market.build_bid_match(peers)
    return peers, g, bm


def test_two_buyer_reference_objective():
    peers, g, bm = three_peer_case()
    sol = clearing.clear_reference(peers, g, bm)
    assert sol.is_optimal
    assert sol.objective == pytest.approx(0.0233 + 0.0133, abs=1e-9)
    assert sol.transactions[0, 1] == pytest.approx(1.0, abs=1e-9)
    assert sol.transactions[0, 2] == pytest.approx(1.0, abs=1e-9)
    assert sol.u_sell[0] == pytest.approx(0.0, abs=1e-9)


def test_no_surplus_all_from_utility():
    peers = [
        peer(0, c=1.5, bid=0.18, retail=0.18),
        peer(1, c=0.5, bid=0.17, retail=0.17),
    ]
    g = wide_grid()
    sol = clearing.clear_reference(peers, g, market.build_bid_match(peers))
    assert sol.is_optimal
    assert np.all(sol.transactions == 0.0)
    assert sol.objective == pytest.approx(0.0)
    assert sol.u_buy[0] == pytest.approx(1.5, abs=1e-9)
    assert sol.u_buy[1] == pytest.approx(0.5, abs=1e-9)


def test_all_bids_mismatched_surplus_to_utility():
    peers = [
        peer(0, e=2.0, ask=0.19, pv_kw=5.0),  # asks above every bid
        peer(1, c=1.0, bid=0.18, retail=0.18),
    ]
    g = wide_grid()
    sol = clearing.clear_reference(peers, g, market.build_bid_match(peers))
    assert sol.is_optimal
    assert np.all(sol.transactions == 0.0)
    assert sol.u_sell[0] == pytest.approx(2.0, abs=1e-9)
    assert sol.u_buy[1] == pytest.approx(1.0, abs=1e-9)


def test_congested_line_curtails_to_voltage_limit():
    # 1 kVA base so kWh are per-unit directly; R = 0.02 on the single line
    g = grid.build_grid(
        [grid.Bus(0, None), grid.Bus(1, 0, r=0.01, x=0.0)],
        v_lo=0.95, v_hi=1.05, base_kva=1.0,
    )
    peers = [
        peer(0, bus=1, e=10.0, ask=0.15, pv_kw=12.0),
        peer(1, bus=1, c=2.0, bid=0.18, retail=0.18),
    ]
    bm = market.build_bid_match(peers)
    sol = clearing.clear_reference(peers, g, bm)
    assert sol.is_optimal
    # hand-solved binding vertex: net injection capped at 0.1025/0.02
    max_net = (1.05**2 - 1.0) / 0.02
    net = 10.0 - sol.curtailment[0] - 2.0
    assert net <= max_net + 1e-7
    assert sol.curtailment[0] + sol.u_sell[0] == pytest.approx(8.0, abs=1e-7)
    assert sol.curtailment[0] >= 8.0 - max_net - 1e-7
    assert sol.transactions[0, 1] == pytest.approx(2.0, abs=1e-9)
    assert sol.objective == pytest.approx(2.0 * (0.165 - 0.1417), abs=1e-9)


def test_clearing_invariants_and_conservation():
    peers, g, bm = three_peer_case()
    sol = clearing.clear_reference(peers, g, bm)
    e = np.array([p.production for p in peers])
    c = np.array([p.consumption for p in peers])
    net = e - sol.curtailment - c
    # per-peer balance
    sold = sol.transactions.sum(axis=1)
    bought = sol.transactions.sum(axis=0)
    assert net == pytest.approx(sold - bought + sol.u_sell - sol.u_buy, abs=1e-8)
    # community conservation: p2p trades cancel pairwise
    assert net.sum() == pytest.approx((sol.u_sell - sol.u_buy).sum(), abs=1e-8)
    # trade caps and bid compatibility
    caps = bm.trade_cap
    for i, j in zip(*np.nonzero(sol.transactions > 1e-9)):
        assert bm.feasible[i, j]
        assert peers[i].ask <= peers[j].bid
        assert sol.transactions[i, j] <= caps[i] + 1e-9
    assert (sol.transactions.sum(axis=1) <= caps + 1e-7).all()


def test_revenue_examples():
    peers, g, bm = three_peer_case()
    sol = clearing.clear_reference(peers, g, bm)
    part = market.GroupPartition.from_peers(peers)
    ledger = clearing.compute_revenue(sol, peers, part)
    # seller: (0.165-0.1417) + (0.155-0.1417)
    assert ledger.per_peer[0] == pytest.approx(0.0233 + 0.0133, abs=1e-9)
    # buyer at retail 0.18 paying 0.165 for 1 kWh
    assert ledger.per_peer[1] == pytest.approx(0.015, abs=1e-9)
    assert ledger.per_group["s"] == pytest.approx(ledger.per_peer[0])
    # objective equals the seller share; total profit is at least that
    assert sol.objective == pytest.approx(ledger.per_peer[0], abs=1e-9)
    assert ledger.per_peer.sum() >= sol.objective - 1e-9


def test_zero_trades_zero_revenue():
    peers = [peer(0, c=1.0, bid=0.18, retail=0.18)]
    g = wide_grid()
    sol = clearing.clear_reference(peers, g, market.build_bid_match(peers))
    part = market.GroupPartition.from_peers(peers)
    ledger = clearing.compute_revenue(sol, peers, part)
    assert ledger.per_peer == pytest.approx(np.zeros(1))


def random_micro_case(rng):
    """<=3 peers, 0.25-granular quantities, random bid pattern."""
    n_sellers = int(rng.integers(1, 3))
    n_buyers = 3 - n_sellers
    peers = []
    pid = 0
    for _ in range(n_sellers):
        e = float(rng.integers(1, 9)) * 0.5
        ask = float(rng.choice([0.1417, 0.15, 0.17, 0.19]))
        peers.append(peer(pid, e=e, ask=ask, pv_kw=8.0, group=f"g{pid}"))
        pid += 1
    for _ in range(n_buyers):
        c = float(rng.integers(1, 9)) * 0.5
        bid = float(rng.choice([0.145, 0.16, 0.18, 0.2]))
        peers.append(peer(pid, c=c, bid=bid, retail=0.2, group=f"g{pid}"))
        pid += 1
    return peers


def test_reference_matches_micro_enumeration():
    rng = np.random.default_rng(2024)
    g = wide_grid()
    for _ in range(50):
        peers = random_micro_case(rng)
        bm = market.build_bid_match(peers)
        sol = clearing.clear_reference(peers, g, bm)
        assert sol.is_optimal
        oracle = enumerate_micro_clearing(peers, bm.feasible, bm.trade_cap)
        assert sol.objective == pytest.approx(oracle, abs=1e-6)
        for i, j in zip(*np.nonzero(sol.transactions > 1e-9)):
            assert peers[i].ask <= peers[j].bid


def test_check_feasible_passes_on_solution():
    peers, g, bm = three_peer_case()
    problem, block = clearing.build_reference_lp(peers, g, bm)
    sol_lp = lp.solve(problem)
    assert sol_lp.status is lp.LpStatus.OPTIMAL
    assert lp.check_feasible(problem, sol_lp.x, tol=1e-7) == []
    sol = clearing.clear_reference(peers, g, bm)
    point = clearing.solution_point(block, sol)
    assert lp.check_feasible(problem, point, tol=1e-7) == []


def test_unknown_bus_rejected():
    peers = [peer(0, bus=9, e=1.0, pv_kw=1.0)]
    g = wide_grid()
    with pytest.raises(ValueError):
        clearing.clear_reference(peers, g, market.build_bid_match(peers))


def test_peer_position_ids_enforced():
    peers = [peer(3, e=1.0, pv_kw=1.0)]
    g = wide_grid()
    with pytest.raises(ValueError):
        clearing.clear_reference(peers, g, market.build_bid_match(peers))


def test_solution_export_roundtrip(tmp_path):
    peers, g, bm = three_peer_case()
    sol = clearing.clear_reference(peers, g, bm)
    part = market.GroupPartition.from_peers(peers)
    ledger = clearing.compute_revenue(sol, peers, part)
    path = tmp_path / "slot.solution.tsv"
    clearing.export_solution(path, sol, ledger)
    back, profit = clearing.import_solution(path)
    assert back.status == sol.status
    assert back.objective == sol.objective
    assert np.array_equal(back.transactions, sol.transactions)
    assert np.array_equal(back.u_buy, sol.u_buy)
    assert np.array_equal(profit, ledger.per_peer)
    # byte-identical on re-export
    path2 = tmp_path / "again.tsv"
    clearing.export_solution(path2, back, clearing.RevenueLedger(profit, {}))
    assert path.read_bytes() == path2.read_bytes()
