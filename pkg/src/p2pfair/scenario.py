"""Reproducible case-study scenarios: grid, households, tariffs, profiles.

A scenario places a fixed number of households on every non-substation bus
of a radial feeder, splits them into energy classes that drive peak power,
PV ownership, and tariff choice, and produces 24 hourly peer lists from
normalized consumption/production shapes with multiplicative Gaussian noise.
Bids sit at their admissible extremes: buyers bid their hourly retail price
and sellers ask the utility buyback price, so every trade that beats the
utility for both sides is admissible.

Everything is seed-deterministic: class, tariff, and PV assignments use
largest-remainder quotas (realized frequencies match the requested shares to
within one household), and noise is drawn in one fixed-order batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

import numpy as np

from .grid import GridModel, build_grid, read_grid_file, write_grid_file, Bus
from .market import GroupPartition, Peer, PV_GROUP

__all__ = [
    "ClassSpec",
    "Scenario",
    "ScenarioSpec",
    "TariffSchedule",
    "add_community_pv",
    "default_consumption_shape",
    "default_pv_shape",
    "export_scenario",
    "generate",
    "import_scenario",
    "load_price_series",
    "market_active_slots",
]

DAY_HOURS = range(6, 22)  # the two-rate tariff's daytime window

# Normalized (unit-peak) 24-hour shapes.  The consumption curve humps in the
# morning and evening with a moderate midday plateau; the production curve is
# a clipped midday bell.  Their crossings keep the surplus window contiguous
# under the default noise level, and the midday ratio keeps a per-household
# PV surplus comparable to a small household's deficit.
_CONSUMPTION_SHAPE = np.array([
    0.45, 0.40, 0.37, 0.36, 0.37, 0.42, 0.55, 0.70, 0.74, 0.55, 0.63, 0.71,
    0.74, 0.71, 0.63, 0.55, 0.76, 0.80, 0.88, 1.00, 0.95, 0.82, 0.64, 0.52,
])
_PV_SHAPE = np.array([
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.18, 0.40, 0.66, 0.85, 0.97,
    1.00, 0.96, 0.86, 0.70, 0.46, 0.24, 0.08, 0.01, 0.0, 0.0, 0.0, 0.0,
])


def default_consumption_shape() -> np.ndarray:
    return _CONSUMPTION_SHAPE.copy()


def default_pv_shape() -> np.ndarray:
    return _PV_SHAPE.copy()


@dataclass(frozen=True)
class TariffSchedule:
    """Hourly retail price series plus the flat buyback price."""

    kind: str  # flat | double | dynamic
    retail: np.ndarray  # 24 entries, EUR/kWh
    buyback: float

    def __post_init__(self):
        if self.kind not in ("flat", "double", "dynamic"):
            raise ValueError(f"unknown tariff kind {self.kind!r}")
        if len(self.retail) != 24 or np.any(self.retail < 0):
            raise ValueError("retail series must be 24 nonnegative prices")
        if self.kind == "flat" and len(set(map(float, self.retail))) != 1:
            raise ValueError("flat tariff must have a single price")
        if self.kind == "double" and len(set(map(float, self.retail))) != 2:
            raise ValueError("double tariff must have exactly two rates")
        if self.buyback > float(self.retail.min()):
            raise ValueError(
                f"buyback {self.buyback} above the minimum retail price "
                f"{float(self.retail.min())} invites arbitrage"
            )

    @staticmethod
    def flat(price: float, buyback: float) -> "TariffSchedule":
        return TariffSchedule("flat", np.full(24, price), buyback)

    @staticmethod
    def double(day: float, night: float, buyback: float) -> "TariffSchedule":
        retail = np.full(24, night)
        retail[list(DAY_HOURS)] = day
        return TariffSchedule("double", retail, buyback)

    @staticmethod
    def dynamic(wholesale, fee: float, buyback: float) -> "TariffSchedule":
        return TariffSchedule("dynamic", np.asarray(wholesale, dtype=float) + fee, buyback)


@dataclass(frozen=True)
class ClassSpec:
    """One energy class: population share, scale, PV ownership, tariff mix."""

    label: str
    share: float
    peak_kw: float
    pv_share: float
    tariff_mix: dict[str, float]

    def __post_init__(self):
        if not 0 <= self.pv_share <= 1:
            raise ValueError(f"class {self.label}: pv_share outside [0, 1]")
        if abs(sum(self.tariff_mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"class {self.label}: tariff mix must sum to 1")


def paper_classes() -> list[ClassSpec]:
    """Default energy classes: rich/moderate/poor.

    Peaks, PV ownership, and tariff mixes follow the case-study values; the
    population shares tilt toward the PV-owning class so community supply
    roughly covers the fixed-tariff demand in the midday window.
    """
    return [
        ClassSpec("R", 0.42, 5.1, 0.80, {"dynamic": 0.8, "double": 0.1, "flat": 0.1}),
        ClassSpec("M", 0.31, 3.9, 0.20, {"dynamic": 0.5, "double": 0.1, "flat": 0.4}),
        ClassSpec("P", 0.27, 2.1, 0.00, {"dynamic": 0.2, "double": 0.1, "flat": 0.7}),
    ]


@dataclass
class ScenarioSpec:
    """Complete, serializable description of one simulated day."""

    grid_file: str = "ieee33"
    peers_per_bus: int = 4
    seed: int = 7
    noise_sd: float = 0.1
    base_kva: float = 1000.0
    v0: float = 1.0
    v_lo: float = 0.95
    v_hi: float = 1.05
    slot_hours: float = 1.0
    power_factor: float = 0.95
    classes: list[ClassSpec] = field(default_factory=paper_classes)
    flat_price: float = 0.18736
    double_day: float = 0.18996
    double_night: float = 0.17766
    dynamic_prices: str = "low"  # "high", "low", or a 24-row file path
    dynamic_fee: float = 0.075
    buyback: float = 0.1417
    # shapes: None for the built-ins, a 24-entry list, or a 24-row file path
    consumption_shape: list[float] | str | None = None
    pv_shape: list[float] | str | None = None
    community_pv: dict | None = None  # {"bus": int, "capacity_kw": float}

    def __post_init__(self):
        if self.peers_per_bus < 1:
            raise ValueError("peers_per_bus must be positive")
        if abs(sum(c.share for c in self.classes) - 1.0) > 1e-9:
            raise ValueError("class shares must sum to 1")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power factor must lie in (0, 1]")

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        data = asdict(self)
        data["classes"] = [asdict(c) for c in self.classes]
        return json.dumps(data, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ScenarioSpec":
        data = json.loads(text)
        data["classes"] = [ClassSpec(**c) for c in data.get("classes", [])]
        return ScenarioSpec(**data)

    @staticmethod
    def from_file(path) -> "ScenarioSpec":
        return ScenarioSpec.from_json(Path(path).read_text(encoding="utf-8"))

    # -- derived inputs -----------------------------------------------------

    def tariff_schedules(self) -> dict[str, TariffSchedule]:
        wholesale = load_price_series(self.dynamic_prices)
        return {
            "flat": TariffSchedule.flat(self.flat_price, self.buyback),
            "double": TariffSchedule.double(self.double_day, self.double_night, self.buyback),
            "dynamic": TariffSchedule.dynamic(wholesale, self.dynamic_fee, self.buyback),
        }

    def shapes(self) -> tuple[np.ndarray, np.ndarray]:
        def resolve(value, fallback):
            if value is None:
                return fallback()
            if isinstance(value, str):
                return _read_price_file(value)  # same 24-row columnar layout
            return np.asarray(value, dtype=float)

        cons = resolve(self.consumption_shape, default_consumption_shape)
        pv = resolve(self.pv_shape, default_pv_shape)
        for name, arr in (("consumption", cons), ("pv", pv)):
            if arr.shape != (24,) or arr.min() < 0:
                raise ValueError(f"{name} shape must be 24 nonnegative values")
        return cons, pv

    def build_grid_model(self) -> GridModel:
        if self.grid_file == "ieee33":
            with resources.as_file(
                resources.files("p2pfair.data").joinpath("ieee33_bus.grid")
            ) as p:
                buses = read_grid_file(p)
        else:
            buses = read_grid_file(self.grid_file)
        return build_grid(buses, self.v0, self.v_lo, self.v_hi, self.base_kva)


def load_price_series(source: str) -> np.ndarray:
    """A 24-entry wholesale price series from a name or a file path."""
    if source in ("high", "low"):
        ref = resources.files("p2pfair.data").joinpath(f"prices_{source}_dynamic.tsv")
        with resources.as_file(ref) as p:
            return _read_price_file(p)
    return _read_price_file(source)


def _read_price_file(path) -> np.ndarray:
    prices: dict[int, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            hour, price = line.split()
            prices[int(hour)] = float(price)
    if sorted(prices) != list(range(24)):
        raise ValueError(f"{path}: expected 24 hourly prices")
    return np.array([prices[h] for h in range(24)])


@dataclass
class Scenario:
    """Generated peers for every hour plus the shared grid and partition."""

    spec: ScenarioSpec
    grid: GridModel
    peers_by_hour: list[list[Peer]]
    partition: GroupPartition
    roster: list[dict]  # per-peer static fields for export and reruns

    @property
    def n_peers(self) -> int:
        return len(self.peers_by_hour[0])


def _quota_counts(total: int, shares: list[float]) -> list[int]:
    """Largest-remainder apportionment of ``total`` into ``shares``."""
    raw = [total * s for s in shares]
    counts = [math.floor(r) for r in raw]
    remainder = total - sum(counts)
    order = sorted(range(len(shares)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _deal(labels: list[str], targets: list[int]) -> "_Dealer":
    return _Dealer(labels, targets)


class _Dealer:
    """Deterministic interleaved dealing that matches target counts exactly.

    Each draw picks the label whose assigned fraction of target lags most,
    spreading every category evenly over the dealt sequence (and therefore
    evenly over buses, which consume the sequence in order).
    """

    def __init__(self, labels: list[str], targets: list[int]):
        self.labels = labels
        self.targets = targets
        self.given = [0] * len(labels)

    def draw(self) -> str:
        best, best_key = None, None
        for i, t in enumerate(self.targets):
            if self.given[i] >= t:
                continue
            key = (self.given[i] + 1.0) / t
            if best_key is None or key < best_key:
                best, best_key = i, key
        if best is None:
            raise RuntimeError("dealer exhausted")
        self.given[best] += 1
        return self.labels[best]


def generate(spec: ScenarioSpec) -> Scenario:
    """Build the full scenario for one day.

    Households are dealt to buses in bus order; class, tariff, and PV
    assignments come from quota dealers, so realized shares match the spec to
    within one household each.  Hourly energies are shape * (1 + noise) *
    class peak with the noise factor clamped at zero.
    """
    g = spec.build_grid_model()
    cons_shape, pv_shape = spec.shapes()
    schedules = spec.tariff_schedules()
    rng = np.random.default_rng(spec.seed)

    all_buses = [g.substation] + list(g.bus_ids)
    n = len(all_buses) * spec.peers_per_bus
    class_labels = [c.label for c in spec.classes]
    class_of = _deal(class_labels, _quota_counts(n, [c.share for c in spec.classes]))
    assignments: list[dict] = []
    for bus in all_buses:
        for _ in range(spec.peers_per_bus):
            assignments.append({"bus": bus, "class": class_of.draw()})

    by_class: dict[str, list[int]] = {c.label: [] for c in spec.classes}
    for idx, a in enumerate(assignments):
        by_class[a["class"]].append(idx)
    for cls in spec.classes:
        members = by_class[cls.label]
        kinds = list(cls.tariff_mix)
        tariff_dealer = _deal(kinds, _quota_counts(len(members), [cls.tariff_mix[k] for k in kinds]))
        pv_dealer = _deal(["pv", "none"], _quota_counts(len(members), [cls.pv_share, 1 - cls.pv_share]))
        for idx in members:
            assignments[idx]["tariff"] = tariff_dealer.draw()
            assignments[idx]["pv"] = pv_dealer.draw() == "pv"
            assignments[idx]["peak_kw"] = cls.peak_kw

    # one fixed-order noise batch keeps draws independent of assignment logic
    noise_c = np.clip(1.0 + spec.noise_sd * rng.standard_normal((n, 24)), 0.0, None)
    noise_e = np.clip(1.0 + spec.noise_sd * rng.standard_normal((n, 24)), 0.0, None)

    tan_phi = math.tan(math.acos(spec.power_factor))
    peers_by_hour: list[list[Peer]] = []
    for h in range(24):
        peers: list[Peer] = []
        for i, a in enumerate(assignments):
            peak = a["peak_kw"]
            c = float(cons_shape[h] * noise_c[i, h] * peak * spec.slot_hours)
            e = float(pv_shape[h] * noise_e[i, h] * peak * spec.slot_hours) if a["pv"] else 0.0
            retail = float(schedules[a["tariff"]].retail[h])
            # loads draw reactive power; PV inverters run at unity by default
            kw = c / spec.slot_hours
            reactive = 0.0 if a["pv"] else -kw * tan_phi / spec.base_kva
            peers.append(
                Peer(
                    id=i, bus=a["bus"], consumption=c, production=e,
                    ask=spec.buyback, bid=retail, retail_price=retail,
                    buyback_price=spec.buyback, reactive_pu=reactive,
                    group=a["class"], pv_kw=peak if a["pv"] else 0.0,
                )
            )
        peers_by_hour.append(peers)

    partition = GroupPartition(
        {c.label: tuple(i for i, a in enumerate(assignments) if a["class"] == c.label)
         for c in spec.classes}
    )
    roster = [
        {"id": i, "bus": a["bus"], "class": a["class"], "tariff": a["tariff"],
         "pv_kw": a["peak_kw"] if a["pv"] else 0.0, "pf_override": ""}
        for i, a in enumerate(assignments)
    ]
    scn = Scenario(spec, g, peers_by_hour, partition, roster)
    if spec.community_pv:
        scn = add_community_pv(scn, int(spec.community_pv["bus"]),
                               float(spec.community_pv["capacity_kw"]))
    return scn


def market_active_slots(scenario: Scenario) -> list[int]:
    """Hours in which at least one participant holds a strict surplus."""
    return [
        h for h, peers in enumerate(scenario.peers_by_hour)
        if any(p.production > p.consumption for p in peers)
    ]


def add_community_pv(scenario: Scenario, bus: int, capacity_kw: float) -> Scenario:
    """Append a non-profit PV plant: zero ask, zero consumption, no noise."""
    if not scenario.grid.contains_bus(bus):
        raise ValueError(f"community pv bus {bus} not in the grid")
    spec = scenario.spec
    _, pv_shape = spec.shapes()
    new_id = scenario.n_peers
    hours = []
    for h, peers in enumerate(scenario.peers_by_hour):
        plant = Peer(
            id=new_id, bus=bus, consumption=0.0,
            production=float(pv_shape[h] * capacity_kw * spec.slot_hours),
            ask=0.0, bid=0.0, retail_price=0.0, buyback_price=0.0,
            reactive_pu=0.0, group=PV_GROUP, pv_kw=capacity_kw, is_pv_actor=True,
        )
        hours.append(list(peers) + [plant])
    partition = GroupPartition(
        dict(scenario.partition.groups), scenario.partition.pv + (new_id,)
    )
    roster = scenario.roster + [
        {"id": new_id, "bus": bus, "class": PV_GROUP, "tariff": "",
         "pv_kw": capacity_kw, "pf_override": ""}
    ]
    return Scenario(spec, scenario.grid, hours, partition, roster)


# ---------------------------------------------------------------------------
# Scenario export / import for exact reruns
# ---------------------------------------------------------------------------


def export_scenario(scenario: Scenario, out_dir) -> None:
    """Write roster, per-slot peer table, grid, and spec into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(scenario.spec.to_json() + "\n", encoding="utf-8")
    with open(out / "roster.tsv", "w", encoding="utf-8") as fh:
        fh.write("id\tbus\tclass\ttariff\tpv_kw\tpf_override\n")
        for r in scenario.roster:
            fh.write(
                f"{r['id']}\t{r['bus']}\t{r['class']}\t{r['tariff']}\t"
                f"{float(r['pv_kw'])!r}\t{r['pf_override']}\n"
            )
    with open(out / "slots.tsv", "w", encoding="utf-8") as fh:
        fh.write("hour\tid\tconsumption\tproduction\task\tbid\tretail\tbuyback\treactive_pu\n")
        for h, peers in enumerate(scenario.peers_by_hour):
            for p in peers:
                fh.write(
                    f"{h}\t{p.id}\t{p.consumption!r}\t{p.production!r}\t{p.ask!r}\t"
                    f"{p.bid!r}\t{p.retail_price!r}\t{p.buyback_price!r}\t{p.reactive_pu!r}\n"
                )
    grid_buses = [Bus(scenario.grid.substation, None)] + [
        Bus(b, _parent_of(scenario.grid, b),
            float(scenario.grid.resistance[scenario.grid.bus_index(b)]),
            float(scenario.grid.reactance[scenario.grid.bus_index(b)]))
        for b in scenario.grid.bus_ids
    ]
    write_grid_file(grid_buses, out / "grid.tsv")


def _parent_of(grid: GridModel, bus: int) -> int:
    i = grid.bus_index(bus)
    row = grid.incidence[i]
    parents = np.nonzero(row == -1.0)[0]
    return grid.substation if len(parents) == 0 else grid.bus_ids[int(parents[0])]


def import_scenario(in_dir) -> Scenario:
    """Rebuild a scenario exactly from an exported directory (no RNG)."""
    src = Path(in_dir)
    spec = ScenarioSpec.from_file(src / "spec.json")
    buses = read_grid_file(src / "grid.tsv")
    g = build_grid(buses, spec.v0, spec.v_lo, spec.v_hi, spec.base_kva)

    roster: list[dict] = []
    with open(src / "roster.tsv", "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            roster.append(
                {"id": int(parts[0]), "bus": int(parts[1]), "class": parts[2],
                 "tariff": parts[3], "pv_kw": float(parts[4]), "pf_override": parts[5]}
            )
    static = {r["id"]: r for r in roster}

    rows: dict[int, list] = {h: [] for h in range(24)}
    with open(src / "slots.tsv", "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            h, pid = int(parts[0]), int(parts[1])
            r = static[pid]
            rows[h].append(
                Peer(
                    id=pid, bus=r["bus"], consumption=float(parts[2]),
                    production=float(parts[3]), ask=float(parts[4]), bid=float(parts[5]),
                    retail_price=float(parts[6]), buyback_price=float(parts[7]),
                    reactive_pu=float(parts[8]), group=r["class"],
                    pv_kw=r["pv_kw"], is_pv_actor=r["class"] == PV_GROUP,
                )
            )
    peers_by_hour = [sorted(rows[h], key=lambda p: p.id) for h in range(24)]
    groups: dict[str, list[int]] = {}
    pv: list[int] = []
    for r in roster:
        if r["class"] == PV_GROUP:
            pv.append(r["id"])
        else:
            groups.setdefault(r["class"], []).append(r["id"])
    partition = GroupPartition({k: tuple(v) for k, v in groups.items()}, tuple(pv))
    return Scenario(spec, g, peers_by_hour, partition, roster)
