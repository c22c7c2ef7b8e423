"""Peer-to-peer electricity market clearing with group-fair redistribution.

The package clears hourly community electricity markets on radial
distribution feeders, quantifies how unevenly trades fall across household
groups via transport distances between per-group trade distributions, and
redistributes trades under profit and grid constraints to shrink the worst
group gap.
"""

from .clearing import ClearingSolution, RevenueLedger, clear_reference, compute_revenue
from .fair import FairModelInputs, FairOutcome, alternating_solve, epsilon_sweep
from .fairness import UnfairnessReport, trade_distribution, unfairness
from .grid import Bus, GridModel, build_grid, voltage_profile
from .lp import LpProblem, LpSolution, LpStatus, check_feasible, solve
from .market import BidMatch, GroupPartition, Peer, build_bid_match
from .scenario import Scenario, ScenarioSpec, add_community_pv, generate, market_active_slots

__version__ = "0.1.0"

__all__ = [
    "BidMatch",
    "Bus",
    "ClearingSolution",
    "FairModelInputs",
    "FairOutcome",
    "GridModel",
    "GroupPartition",
    "LpProblem",
    "LpSolution",
    "LpStatus",
    "Peer",
    "RevenueLedger",
    "Scenario",
    "ScenarioSpec",
    "UnfairnessReport",
    "add_community_pv",
    "alternating_solve",
    "build_bid_match",
    "build_grid",
    "check_feasible",
    "clear_reference",
    "compute_revenue",
    "epsilon_sweep",
    "generate",
    "market_active_slots",
    "solve",
    "trade_distribution",
    "unfairness",
    "voltage_profile",
]
