"""Reference market clearing and revenue accounting.

The reference model maximizes seller surplus over all admissible trades
("sell to the highest bidder") subject to per-peer energy balance, trade
caps, curtailment limits, and the grid voltage bands.  Both it and the fair
redistribution model share the same variable/constraint block, built here.

Sign conventions: ``u_buy`` is energy a peer buys from the utility, and
``u_sell`` energy it sells to the utility.  A peer is a seller or a buyer for
a slot, never both: sellers carry ``u_sell`` (and curtailment), buyers carry
``u_buy``.  This keeps the balance rows free of offsetting wash trades that
would otherwise let the objective inflate transactions beyond physical
surplus.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .grid import GridModel, voltage_constraint_rows
from .market import BidMatch, GroupPartition, Peer, surplus_deficit

__all__ = [
    "ClearingSolution",
    "MarketBlock",
    "RevenueLedger",
    "build_market_block",
    "build_reference_lp",
    "clear_reference",
    "compute_revenue",
    "export_solution",
    "import_solution",
    "price_matrix",
    "solution_point",
]


@dataclass
class MarketBlock:
    """Variable indices and rows of the physical market model.

    ``pairs[k] = (i, j)`` maps the k-th trade variable to seller ``i`` and
    buyer ``j`` (list positions, which equal peer ids).  Peers without a
    role-appropriate exchange variable are absent from the u/curtail maps.
    """

    problem: lp.LpProblem
    pairs: list[tuple[int, int]]
    x_index: dict[tuple[int, int], int]
    u_sell: dict[int, int]
    u_buy: dict[int, int]
    e_curt: dict[int, int]
    balance_rows: list[int] = field(default_factory=list)
    voltage_rows: list[int] = field(default_factory=list)


def _check_ids(peers: list[Peer]) -> None:
    for pos, p in enumerate(peers):
        if p.id != pos:
            raise ValueError(
                f"peer ids must equal list positions (peer {p.id} at position {pos})"
            )


def build_market_block(
    peers: list[Peer],
    grid: GridModel,
    bid_match: BidMatch,
    problem: lp.LpProblem,
    slot_hours: float = 1.0,
) -> MarketBlock:
    """Add trade, utility-exchange, curtailment variables and physical rows.

    Trade variables exist only for admissible pairs; inadmissible entries of
    the transaction matrix are fixed at zero by omission.  Voltage rows are
    spliced over curtailment variables: active nodal injections are data
    except for curtailment, reactive injections are data entirely.
    """
    _check_ids(peers)
    n = len(peers)
    if bid_match.n_peers != n:
        raise ValueError("bid match size does not match peer count")
    for p in peers:
        if not grid.contains_bus(p.bus):
            raise ValueError(f"peer {p.id} sits on unknown bus {p.bus}")

    sellers = [p.id for p in peers if surplus_deficit(p) >= 0.0]
    buyers = [p.id for p in peers if surplus_deficit(p) < 0.0]

    pairs: list[tuple[int, int]] = []
    x_index: dict[tuple[int, int], int] = {}
    net = [surplus_deficit(p) for p in peers]
    for i in range(n):
        cap = bid_match.trade_cap[i]
        for j in np.nonzero(bid_match.feasible[i])[0]:
            j = int(j)
            # presolve: a trade can never exceed the seller's surplus or the
            # buyer's deficit, both implied by balance and nonnegativity
            ub = min(cap, max(net[i], 0.0), max(-net[j], 0.0))
            k = problem.add_variable(0.0, ub, name=f"x[{i},{j}]")
            pairs.append((i, j))
            x_index[(i, j)] = k

    u_sell = {i: problem.add_variable(0.0, np.inf, name=f"u_sell[{i}]") for i in sellers}
    u_buy = {j: problem.add_variable(0.0, np.inf, name=f"u_buy[{j}]") for j in buyers}
    e_curt = {
        p.id: problem.add_variable(0.0, p.production, name=f"e_curt[{p.id}]")
        for p in peers
        if p.production > 0.0
    }

    block = MarketBlock(problem, pairs, x_index, u_sell, u_buy, e_curt)

    # per-peer energy balance:
    #   sold - bought + u_sell - u_buy + curtail = production - consumption
    sold_terms: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n)}
    bought_terms: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n)}
    for (i, j), k in x_index.items():
        sold_terms[i].append((k, 1.0))
        bought_terms[j].append((k, -1.0))
    for p in peers:
        terms = sold_terms[p.id] + bought_terms[p.id]
        if p.id in u_sell:
            terms.append((u_sell[p.id], 1.0))
        if p.id in u_buy:
            terms.append((u_buy[p.id], -1.0))
        if p.id in e_curt:
            terms.append((e_curt[p.id], 1.0))
        row = problem.add_constraint(
            terms, lp.EQ, surplus_deficit(p), label=f"balance[{p.id}]"
        )
        block.balance_rows.append(row)

    # voltage bands over curtailment variables
    kwh_to_pu = 1.0 / (slot_hours * grid.base_kva)
    peers_at: dict[int, list[Peer]] = {}
    for p in peers:
        peers_at.setdefault(p.bus, []).append(p)
    p0 = np.zeros(grid.n_lines)
    q0 = np.zeros(grid.n_lines)
    for bus, plist in peers_at.items():
        if bus == grid.substation:
            continue  # injections at the slack bus do not move feeder voltages
        m = grid.bus_index(bus)
        p0[m] = sum(surplus_deficit(p) for p in plist) * kwh_to_pu
        q0[m] = sum(p.reactive_pu for p in plist)
    for vrow in voltage_constraint_rows(grid):
        const = float(vrow.p_coefs @ p0 + vrow.q_coefs @ q0)
        terms = []
        for bus, plist in peers_at.items():
            if bus == grid.substation:
                continue
            m = grid.bus_index(bus)
            if vrow.p_coefs[m] == 0.0:
                continue
            for p in plist:
                if p.id in e_curt:
                    terms.append((e_curt[p.id], -vrow.p_coefs[m] * kwh_to_pu))
        relation = lp.GE if vrow.relation == ">=" else lp.LE
        row = problem.add_constraint(
            terms, relation, vrow.rhs - const, label=f"voltage[{vrow.bus}]{vrow.relation}"
        )
        block.voltage_rows.append(row)
    return block


def price_matrix(peers: list[Peer]) -> np.ndarray:
    """Midpoint settlement prices for every (seller, buyer) position pair."""
    asks = np.array([p.ask for p in peers])
    bids = np.array([p.bid for p in peers])
    return 0.5 * (asks[:, None] + bids[None, :])


def build_reference_lp(
    peers: list[Peer],
    grid: GridModel,
    bid_match: BidMatch,
    slot_hours: float = 1.0,
) -> tuple[lp.LpProblem, MarketBlock]:
    """The selfish clearing LP: maximize total seller margin over utility terms."""
    problem = lp.LpProblem(sense="max", name="reference_clearing")
    block = build_market_block(peers, grid, bid_match, problem, slot_hours)
    prices = price_matrix(peers)
    for (i, j), k in block.x_index.items():
        problem.objective[k] = prices[i, j] - peers[i].buyback_price
    return problem, block


@dataclass
class ClearingSolution:
    """Cleared trades and utility exchanges for one slot."""

    transactions: np.ndarray  # kWh, [i, j] = peer i sells to peer j
    u_buy: np.ndarray
    u_sell: np.ndarray
    curtailment: np.ndarray
    objective: float | None
    status: str
    iterations: int = 0
    solve_seconds: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == lp.LpStatus.OPTIMAL.value


def _extract_solution(block: MarketBlock, sol: lp.LpSolution, n: int, seconds: float) -> ClearingSolution:
    X = np.zeros((n, n))
    u_buy = np.zeros(n)
    u_sell = np.zeros(n)
    e_c = np.zeros(n)
    if sol.x is not None:
        for (i, j), k in block.x_index.items():
            X[i, j] = sol.x[k]
        for i, k in block.u_sell.items():
            u_sell[i] = sol.x[k]
        for i, k in block.u_buy.items():
            u_buy[i] = sol.x[k]
        for i, k in block.e_curt.items():
            e_c[i] = sol.x[k]
    objective = sol.objective if sol.status is lp.LpStatus.OPTIMAL else None
    return ClearingSolution(
        X, u_buy, u_sell, e_c, objective, sol.status.value, sol.iterations, seconds
    )


def clear_reference(
    peers: list[Peer],
    grid: GridModel,
    bid_match: BidMatch,
    slot_hours: float = 1.0,
    feas_tol: float = 1e-7,
    max_iters: int | None = None,
) -> ClearingSolution:
    """Solve the reference model; non-optimal solver statuses pass through."""
    start = time.perf_counter()
    problem, block = build_reference_lp(peers, grid, bid_match, slot_hours)
    sol = lp.solve(problem, feas_tol=feas_tol, max_iters=max_iters)
    seconds = time.perf_counter() - start
    return _extract_solution(block, sol, len(peers), seconds)


def solution_point(block: MarketBlock, solution: ClearingSolution) -> np.ndarray:
    """Assemble the LP variable vector corresponding to a ClearingSolution."""
    x = np.zeros(block.problem.n_vars)
    for (i, j), k in block.x_index.items():
        x[k] = solution.transactions[i, j]
    for i, k in block.u_sell.items():
        x[k] = solution.u_sell[i]
    for i, k in block.u_buy.items():
        x[k] = solution.u_buy[i]
    for i, k in block.e_curt.items():
        x[k] = solution.curtailment[i]
    return x


@dataclass
class RevenueLedger:
    """Extra profit versus utility-only trading, per peer and per group."""

    per_peer: np.ndarray
    per_group: dict[str, float]


def compute_revenue(
    solution: ClearingSolution, peers: list[Peer], partition: GroupPartition
) -> RevenueLedger:
    """Profit of each peer: selling margin over buyback plus buying savings.

    A sale of ``X[i, j]`` earns peer ``i`` the settlement price minus its
    buyback price; the purchase saves peer ``j`` its own retail price minus
    the settlement price.
    """
    _check_ids(peers)
    X = solution.transactions
    prices = price_matrix(peers)
    buyback = np.array([p.buyback_price for p in peers])
    retail = np.array([p.retail_price for p in peers])
    sell_margin = (X * (prices - buyback[:, None])).sum(axis=1)
    buy_margin = (X * (retail[None, :] - prices)).sum(axis=0)
    per_peer = sell_margin + buy_margin
    per_group = {
        label: float(sum(per_peer[i] for i in ids))
        for label, ids in partition.groups.items()
    }
    return RevenueLedger(per_peer, per_group)


# ---------------------------------------------------------------------------
# Solution files: sparse trade triples plus per-peer columns
# ---------------------------------------------------------------------------


def export_solution(path, solution: ClearingSolution, revenue: RevenueLedger | None = None) -> None:
    """Write a solution as columnar text.

    Layout: a ``status``/``objective`` header, one ``trade seller buyer kwh``
    line per nonzero transaction, then one ``peer id u_buy u_sell curtail
    profit`` line per peer.  Numbers use ``repr`` so re-imports are exact.
    """
    n = len(solution.u_buy)
    profit = revenue.per_peer if revenue is not None else np.zeros(n)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# p2pfair clearing solution v1\n")
        fh.write(f"status {solution.status}\n")
        obj = "none" if solution.objective is None else repr(float(solution.objective))
        fh.write(f"objective {obj}\n")
        fh.write("# trade <seller> <buyer> <kwh>\n")
        ii, jj = np.nonzero(solution.transactions)
        for i, j in zip(ii, jj):
            fh.write(f"trade {i} {j} {float(solution.transactions[i, j])!r}\n")
        fh.write("# peer <id> <u_buy> <u_sell> <curtail> <profit>\n")
        for i in range(n):
            fh.write(
                f"peer {i} {float(solution.u_buy[i])!r} {float(solution.u_sell[i])!r} "
                f"{float(solution.curtailment[i])!r} {float(profit[i])!r}\n"
            )


def import_solution(path) -> tuple[ClearingSolution, np.ndarray]:
    """Inverse of :func:`export_solution`; returns the solution and profits."""
    status = "unknown"
    objective: float | None = None
    trades: list[tuple[int, int, float]] = []
    peers_rows: list[tuple[int, float, float, float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "status":
                status = parts[1]
            elif parts[0] == "objective":
                objective = None if parts[1] == "none" else float(parts[1])
            elif parts[0] == "trade":
                trades.append((int(parts[1]), int(parts[2]), float(parts[3])))
            elif parts[0] == "peer":
                peers_rows.append(
                    (int(parts[1]), float(parts[2]), float(parts[3]),
                     float(parts[4]), float(parts[5]))
                )
    n = len(peers_rows)
    X = np.zeros((n, n))
    for i, j, v in trades:
        X[i, j] = v
    u_buy = np.zeros(n)
    u_sell = np.zeros(n)
    curt = np.zeros(n)
    profit = np.zeros(n)
    for i, ub, us, ec, pr in peers_rows:
        u_buy[i], u_sell[i], curt[i], profit[i] = ub, us, ec, pr
    sol = ClearingSolution(X, u_buy, u_sell, curt, objective, status)
    return sol, profit
