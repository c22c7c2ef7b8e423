"""Group trade distributions and the transport-based unfairness index.

For each fairness group, every member's total traded energy (bought plus
sold) forms an empirical distribution with uniform weights.  The distance
between two groups is the 1-D earth-mover (order-1 transport) distance with
absolute-difference costs; the community's unfairness level is the maximum
distance over all group pairs.

Two independent routes compute the distance: an explicit transport LP, whose
optimal plan the fair clearing model needs, and a closed-form sorted-quantile
evaluation used as a cross-check and for fast reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp
from .market import GroupPartition

__all__ = [
    "TradeDistribution",
    "TransportPlan",
    "UnfairnessReport",
    "distance_matrix",
    "trade_distribution",
    "unfairness",
    "wasserstein_lp",
    "wasserstein_sorted_oracle",
]

MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class TradeDistribution:
    """Per-member traded energy of one fairness group (kWh, >= 0)."""

    group: str
    totals: np.ndarray
    member_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.totals) != len(self.member_ids) or len(self.totals) == 0:
            raise ValueError(f"group {self.group}: empty or mismatched distribution")
        if np.any(self.totals < -1e-9):
            raise ValueError(f"group {self.group}: negative traded energy")


@dataclass(frozen=True)
class TransportPlan:
    """Mass-transport plan between two uniform empirical distributions."""

    matrix: np.ndarray  # |g| x |g'|, entries >= 0

    def check_marginals(self, tol: float = MARGINAL_TOL) -> None:
        m, n = self.matrix.shape
        if np.any(self.matrix < -tol):
            raise ValueError("transport plan has negative mass")
        if np.abs(self.matrix.sum(axis=1) - 1.0 / m).max() > tol:
            raise ValueError("transport plan row marginals off")
        if np.abs(self.matrix.sum(axis=0) - 1.0 / n).max() > tol:
            raise ValueError("transport plan column marginals off")


def trade_distribution(transactions: np.ndarray, partition: GroupPartition) -> list[TradeDistribution]:
    """Totals of bought plus sold energy per member, for fairness groups only.

    The transaction matrix spans *all* peers, pv actors included, so trades
    with community plants count toward a member's total; the plants
    themselves get no distribution.
    """
    X = np.asarray(transactions, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError("transaction matrix must be square over all peers")
    totals = X.sum(axis=1) + X.sum(axis=0)
    out = []
    for label, ids in partition.groups.items():
        out.append(TradeDistribution(label, totals[list(ids)], tuple(ids)))
    return out


def distance_matrix(tg: TradeDistribution, th: TradeDistribution) -> np.ndarray:
    """Absolute gaps between every support point pair of two groups."""
    return np.abs(tg.totals[:, None] - th.totals[None, :])


def wasserstein_lp(
    tg: TradeDistribution,
    th: TradeDistribution,
    feas_tol: float = 1e-9,
) -> tuple[float, TransportPlan]:
    """Transport distance and an optimal plan via the explicit LP.

    Minimizes total moved mass times distance subject to uniform marginals
    (1/|g| per source point, 1/|g'| per sink point).  The returned plan is a
    vertex of the transportation polytope, so it has at most |g|+|g'|-1
    nonzero entries.
    """
    d = distance_matrix(tg, th)
    m, n = d.shape
    prob = lp.LpProblem(sense="min", name=f"transport[{tg.group},{th.group}]")
    for a in range(m):
        for b in range(n):
            prob.add_variable(0.0, np.inf, objective=float(d[a, b]), name=f"pi[{a},{b}]")
    for a in range(m):
        prob.add_constraint([(a * n + b, 1.0) for b in range(n)], lp.EQ, 1.0 / m,
                            label=f"row[{a}]")
    for b in range(n):
        prob.add_constraint([(a * n + b, 1.0) for a in range(m)], lp.EQ, 1.0 / n,
                            label=f"col[{b}]")
    sol = lp.solve(prob, feas_tol=feas_tol)
    if sol.status is not lp.LpStatus.OPTIMAL:
        raise RuntimeError(
            f"transport LP for ({tg.group}, {th.group}) ended {sol.status.value}"
        )
    plan = TransportPlan(sol.x.reshape(m, n))
    plan.check_marginals()
    return float(sol.objective), plan


def wasserstein_sorted_oracle(tg: TradeDistribution, th: TradeDistribution) -> float:
    """Closed-form 1-D transport distance via quantile functions.

    Sorts both samples, builds the common refinement of the two uniform
    quantile grids {k/|g|} and {k/|g'|}, and integrates the absolute gap
    between the two inverse CDFs.  For equal group sizes this reduces to the
    mean absolute difference of the sorted vectors.
    """
    a = np.sort(tg.totals)
    b = np.sort(th.totals)
    m, n = len(a), len(b)
    grid = np.union1d(np.arange(1, m + 1) / m, np.arange(1, n + 1) / n)
    widths = np.diff(np.concatenate(([0.0], grid)))
    # quantile function value on segment ending at u: sample index ceil(u*k)-1
    ia = np.ceil(grid * m - 1e-12).astype(int) - 1
    ib = np.ceil(grid * n - 1e-12).astype(int) - 1
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


@dataclass(frozen=True)
class UnfairnessReport:
    """Pairwise group distances, their maximum, and where it occurs."""

    distances: dict[tuple[str, str], float]
    d_max: float
    argmax_pair: tuple[str, str]

    def distance(self, g: str, h: str) -> float:
        return self.distances.get((g, h), self.distances.get((h, g), 0.0))


def unfairness(distributions: list[TradeDistribution]) -> UnfairnessReport:
    """Maximum pairwise transport distance over all 2-combinations of groups."""
    if len(distributions) < 2:
        raise ValueError("unfairness needs at least two fairness groups")
    distances: dict[tuple[str, str], float] = {}
    for i, tg in enumerate(distributions):
        for th in distributions[i + 1:]:
            w, _ = wasserstein_lp(tg, th)
            distances[(tg.group, th.group)] = w
    argmax_pair = max(distances, key=lambda k: distances[k])
    return UnfairnessReport(distances, distances[argmax_pair], argmax_pair)
