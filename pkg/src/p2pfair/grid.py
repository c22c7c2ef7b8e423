"""Radial distribution grid model with linearized voltage sensitivities.

Squared bus voltages respond linearly to net nodal injections:

    v = v0 * 1 + R p + Xs q,   R = 2 A^-1 Dr A^-T,   Xs = 2 A^-1 Dx A^-T

where ``A`` is the reduced branch-bus incidence matrix of the tree, ``Dr``
and ``Dx`` hold per-unit line resistances/reactances, and ``p``/``q`` are the
per-unit active/reactive injections at the non-substation buses.  Losses and
branch flow limits are not modeled; only voltage bands constrain the market.

Entry ``R[n, m]`` equals twice the summed resistance of the lines shared by
the root paths of buses ``n`` and ``m``, which is what the recursive
parent-to-child voltage-drop evaluation yields on a tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "Bus",
    "GridModel",
    "GridTopologyError",
    "VoltageRow",
    "build_grid",
    "read_grid_file",
    "voltage_constraint_rows",
    "voltage_profile",
    "write_grid_file",
]


class GridTopologyError(ValueError):
    """Raised for non-tree inputs: cycles, disconnection, multiple roots."""


@dataclass(frozen=True)
class Bus:
    """One non-substation bus and the line connecting it to its parent.

    ``parent`` is None only for the substation; ``r`` and ``x`` are the
    per-unit resistance/reactance of the line to the parent (zero for the
    substation itself).
    """

    id: int
    parent: int | None
    r: float = 0.0
    x: float = 0.0

    def __post_init__(self):
        if self.r < 0 or self.x < 0:
            raise GridTopologyError(f"bus {self.id}: negative line impedance")


@dataclass
class GridModel:
    """Immutable grid data shared by every clearing problem."""

    bus_ids: list[int]  # non-substation buses, topological order from the root
    substation: int
    incidence: np.ndarray  # reduced branch-bus incidence A, lines x buses
    resistance: np.ndarray  # per-unit r per line, ordered like bus_ids
    reactance: np.ndarray
    sens_r: np.ndarray  # R  = 2 A^-1 Dr A^-T
    sens_x: np.ndarray  # Xs = 2 A^-1 Dx A^-T
    v0: float  # squared substation voltage, per unit
    v_lo_sq: float
    v_hi_sq: float
    base_kva: float

    def bus_index(self, bus_id: int) -> int:
        return self._index[bus_id]

    def contains_bus(self, bus_id: int) -> bool:
        return bus_id == self.substation or bus_id in self._index

    @property
    def n_lines(self) -> int:
        return len(self.bus_ids)

    def __post_init__(self):
        self._index = {b: i for i, b in enumerate(self.bus_ids)}


def build_grid(
    buses: list[Bus],
    v0: float = 1.0,
    v_lo: float = 0.95,
    v_hi: float = 1.05,
    base_kva: float = 1000.0,
) -> GridModel:
    """Validate the tree, order buses from the root, precompute R and Xs.

    ``v_lo``/``v_hi`` are voltage *magnitude* bounds; they are squared here
    because the linearized flow model works on squared voltages.  ``v0`` is
    already the squared substation voltage.  The incidence matrix is
    factored once (it is triangular in topological order).
    """
    roots = [b for b in buses if b.parent is None]
    if len(roots) != 1:
        raise GridTopologyError(f"expected exactly one substation, found {len(roots)}")
    substation = roots[0].id
    by_id: dict[int, Bus] = {}
    for b in buses:
        if b.id in by_id:
            raise GridTopologyError(f"duplicate bus id {b.id}")
        by_id[b.id] = b

    children: dict[int, list[int]] = {b.id: [] for b in buses}
    for b in buses:
        if b.parent is not None:
            if b.parent not in by_id:
                raise GridTopologyError(f"bus {b.id}: unknown parent {b.parent}")
            children[b.parent].append(b.id)

    # breadth-first from the substation, children in id order -> deterministic
    order: list[int] = []
    frontier = [substation]
    seen = {substation}
    while frontier:
        nxt: list[int] = []
        for u in frontier:
            for c in sorted(children[u]):
                if c in seen:
                    raise GridTopologyError(f"cycle through bus {c}")
                seen.add(c)
                order.append(c)
                nxt.append(c)
        frontier = nxt
    if len(seen) != len(buses):
        missing = sorted(set(by_id) - seen)
        raise GridTopologyError(f"disconnected buses: {missing}")

    n = len(order)
    idx = {b: i for i, b in enumerate(order)}
    A = np.zeros((n, n))
    r = np.zeros(n)
    x = np.zeros(n)
    for i, bid in enumerate(order):
        b = by_id[bid]
        A[i, i] = 1.0
        if b.parent != substation:
            A[i, idx[b.parent]] = -1.0
        r[i] = b.r
        x[i] = b.x

    # A is lower triangular with unit diagonal in this ordering; F = A^-1 maps
    # line flows to root-path indicators, giving the path-intersection form.
    if n:
        F = scipy.linalg.solve_triangular(A, np.eye(n), lower=True)
        sens_r = 2.0 * F @ np.diag(r) @ F.T
        sens_x = 2.0 * F @ np.diag(x) @ F.T
    else:
        F = np.zeros((0, 0))
        sens_r = np.zeros((0, 0))
        sens_x = np.zeros((0, 0))

    v_lo_sq, v_hi_sq = v_lo * v_lo, v_hi * v_hi
    if not v_lo_sq < v0 < v_hi_sq:
        raise ValueError(
            f"substation voltage v0={v0} outside squared band ({v_lo_sq}, {v_hi_sq})"
        )
    if base_kva <= 0:
        raise ValueError("base_kva must be positive")

    return GridModel(
        bus_ids=order,
        substation=substation,
        incidence=A,
        resistance=r,
        reactance=x,
        sens_r=sens_r,
        sens_x=sens_x,
        v0=v0,
        v_lo_sq=v_lo_sq,
        v_hi_sq=v_hi_sq,
        base_kva=base_kva,
    )


def voltage_profile(grid: GridModel, p, q) -> np.ndarray:
    """Squared voltages at the non-substation buses for injections ``p, q`` (pu)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (grid.n_lines,) or q.shape != (grid.n_lines,):
        raise ValueError(
            f"injection vectors must have shape ({grid.n_lines},), "
            f"got {p.shape} and {q.shape}"
        )
    return grid.v0 + grid.sens_r @ p + grid.sens_x @ q


@dataclass(frozen=True)
class VoltageRow:
    """One linear voltage restriction over nodal injections.

    Reads ``sum(p_coefs * p) + sum(q_coefs * q)  relation  rhs`` with
    injections in per unit; ``relation`` is '>=' for the lower band edge and
    '<=' for the upper one.
    """

    bus: int
    p_coefs: np.ndarray
    q_coefs: np.ndarray
    relation: str
    rhs: float


def voltage_constraint_rows(grid: GridModel) -> list[VoltageRow]:
    """Two rows per bus keeping its squared voltage inside the secure band."""
    rows: list[VoltageRow] = []
    for i, bus in enumerate(grid.bus_ids):
        rp = grid.sens_r[i].copy()
        rq = grid.sens_x[i].copy()
        rows.append(VoltageRow(bus, rp, rq, ">=", grid.v_lo_sq - grid.v0))
        rows.append(VoltageRow(bus, rp, rq, "<=", grid.v_hi_sq - grid.v0))
    return rows


def read_grid_file(path) -> list[Bus]:
    """Parse a grid topology file into buses.

    One line segment per record: ``from_bus to_bus r_pu x_pu`` separated by
    whitespace; ``#`` starts a comment.  The substation is the bus that never
    appears as a ``to_bus``.
    """
    edges: list[tuple[int, int, float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise GridTopologyError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            f, t = int(parts[0]), int(parts[1])
            edges.append((f, t, float(parts[2]), float(parts[3])))
    if not edges:
        raise GridTopologyError(f"{path}: no line segments found")
    froms = {e[0] for e in edges}
    tos = {e[1] for e in edges}
    root_candidates = sorted(froms - tos)
    if len(root_candidates) != 1:
        raise GridTopologyError(
            f"{path}: could not identify a unique substation, candidates {root_candidates}"
        )
    root = root_candidates[0]
    buses = [Bus(root, None)]
    for f, t, r, x in edges:
        buses.append(Bus(t, f, r, x))
    return buses


def write_grid_file(buses: list[Bus], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# from_bus  to_bus  r_pu  x_pu\n")
        for b in buses:
            if b.parent is None:
                continue
            fh.write(f"{b.parent} {b.id} {b.r!r} {b.x!r}\n")
