"""Peers, fairness groups, and bid matching.

A peer submits exactly one bid per hourly slot: an ask (minimum selling
price) when production covers consumption, a bid (maximum buying price)
otherwise.  Asks never undercut the utility buyback price and bids never
exceed the peer's retail price, so every admissible trade beats trading with
the utility for both sides.  Community PV plants are "actors": they sell at
zero price, consume nothing, and stay outside the fairness accounting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BidMatch",
    "GroupPartition",
    "Peer",
    "build_bid_match",
    "matches",
    "surplus_deficit",
    "trade_price",
]

PV_GROUP = "pv"


@dataclass(frozen=True)
class Peer:
    """One market participant in one hourly slot.

    Quantities are kWh for the slot; prices EUR/kWh; ``reactive_pu`` is the
    signed per-unit reactive injection at the peer's bus (negative = draw).
    ``pv_kw`` is the installed PV capacity and doubles as the trade cap.
    """

    id: int
    bus: int
    consumption: float
    production: float
    ask: float  # minimum selling price
    bid: float  # maximum buying price
    retail_price: float  # utility sells to the peer at this price
    buyback_price: float  # utility buys surplus at this price
    reactive_pu: float = 0.0
    group: str = "all"
    pv_kw: float = 0.0
    is_pv_actor: bool = False

    def __post_init__(self):
        if self.consumption < 0 or self.production < 0:
            raise ValueError(f"peer {self.id}: negative energy")
        for name in ("ask", "bid", "retail_price", "buyback_price"):
            if getattr(self, name) < 0:
                raise ValueError(f"peer {self.id}: negative {name}")
        if self.ask < self.buyback_price:
            raise ValueError(
                f"peer {self.id}: ask {self.ask} below buyback {self.buyback_price}"
            )
        if self.bid > self.retail_price:
            raise ValueError(
                f"peer {self.id}: bid {self.bid} above retail {self.retail_price}"
            )
        if self.is_pv_actor and (self.consumption != 0.0 or self.ask != 0.0):
            raise ValueError(f"peer {self.id}: a pv actor must have zero consumption and ask")


def surplus_deficit(peer: Peer) -> float:
    """Signed net energy: positive = surplus to sell, negative = deficit."""
    return peer.production - peer.consumption


def is_seller(peer: Peer) -> bool:
    # exact balance counts as a (zero-surplus) seller; either reading leaves
    # such a peer tradeless, this one keeps the partition deterministic
    return surplus_deficit(peer) >= 0.0


def matches(seller: Peer, buyer: Peer) -> bool:
    """True when the pair may trade: roles fit and the bids cross."""
    return (
        seller.id != buyer.id
        and is_seller(seller)
        and not is_seller(buyer)
        and seller.ask <= buyer.bid
    )


def trade_price(seller: Peer, buyer: Peer) -> float:
    """Settlement price of an admissible pair: the midpoint of ask and bid."""
    if not matches(seller, buyer):
        raise ValueError(f"peers {seller.id} and {buyer.id} do not match")
    return 0.5 * (seller.ask + buyer.bid)


@dataclass
class GroupPartition:
    """Fairness groups plus the excluded pv-actor group.

    ``groups`` maps label -> tuple of peer ids, in a fixed order; ``pv`` holds
    the non-profit actors excluded from unfairness quantification.
    """

    groups: dict[str, tuple[int, ...]]
    pv: tuple[int, ...] = ()

    def validate(self, peers: list[Peer]) -> None:
        all_ids = [i for ids in self.groups.values() for i in ids] + list(self.pv)
        if len(all_ids) != len(set(all_ids)):
            raise ValueError("partition groups overlap")
        if set(all_ids) != {p.id for p in peers}:
            raise ValueError("partition does not cover the peer set exactly")
        for label, ids in self.groups.items():
            if not ids:
                raise ValueError(f"fairness group {label!r} is empty")

    @property
    def labels(self) -> list[str]:
        return list(self.groups)

    def pairs(self) -> list[tuple[str, str]]:
        """All 2-combinations of fairness groups, in label order."""
        labels = self.labels
        return [(a, b) for i, a in enumerate(labels) for b in labels[i + 1:]]

    @staticmethod
    def from_peers(peers: list[Peer]) -> "GroupPartition":
        groups: dict[str, list[int]] = {}
        pv: list[int] = []
        for p in peers:
            if p.is_pv_actor:
                pv.append(p.id)
            else:
                groups.setdefault(p.group, []).append(p.id)
        return GroupPartition({k: tuple(v) for k, v in groups.items()}, tuple(pv))


@dataclass
class BidMatch:
    """Admissibility mask Y and per-seller trade caps M (kWh per pair)."""

    feasible: np.ndarray  # |P| x |P| bool, [i, j] = peer i may sell to peer j
    trade_cap: np.ndarray  # kWh, installed PV capacity over the slot

    @property
    def n_peers(self) -> int:
        return len(self.trade_cap)


def build_bid_match(peers: list[Peer], slot_hours: float = 1.0) -> BidMatch:
    """Admissible trades and caps for one slot.

    Deterministic in the input order: peers are indexed by list position
    (which equals their id in generated scenarios).
    """
    n = len(peers)
    asks = np.array([p.ask for p in peers])
    bids = np.array([p.bid for p in peers])
    seller = np.array([is_seller(p) for p in peers])
    feas = seller[:, None] & ~seller[None, :] & (asks[:, None] <= bids[None, :])
    np.fill_diagonal(feas, False)
    cap = np.array([p.pv_kw * slot_hours for p in peers])
    return BidMatch(feas, cap)
