"""Tables, exports, and plot data for simulation runs.

Tables are views: every number in them is recomputed from exported solution
files, never the other way around.  Formatting is fixed-point with a ``.``
decimal separator and two decimals for kWh quantities, so identical runs
produce byte-identical files.  Wall-clock columns (iteration traces, the
timing table) are inherently non-reproducible and live in clearly named
files that determinism checks exclude.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fair import FairOutcome, IterationRow
from .fairness import TradeDistribution, UnfairnessReport

__all__ = [
    "RunSummary",
    "export_trace",
    "import_trace",
    "sweep_table",
    "timing_table",
    "unfairness_table",
    "write_distribution_data",
    "write_summary",
]


@dataclass
class RunSummary:
    """A labeled table with an optional totals row and per-cell flags.

    ``flags`` marks cells rendered with a trailing ``*`` (the per-row
    arg-max pair in unfairness tables, the plateau point in sweeps).
    """

    title: str
    columns: list[str]
    row_labels: list[str]
    rows: list[list[float]]
    totals: list[float] | None = None
    flags: set[tuple[int, int]] = field(default_factory=set)
    totals_flags: set[int] = field(default_factory=set)
    decimals: int = 2

    def to_text(self) -> str:
        out = [f"# {self.title}"]
        out.append("\t".join(["slot"] + self.columns))
        for r, (label, row) in enumerate(zip(self.row_labels, self.rows)):
            cells = [
                f"{v:.{self.decimals}f}" + ("*" if (r, c) in self.flags else "")
                for c, v in enumerate(row)
            ]
            out.append("\t".join([label] + cells))
        if self.totals is not None:
            cells = [
                f"{v:.{self.decimals}f}" + ("*" if c in self.totals_flags else "")
                for c, v in enumerate(self.totals)
            ]
            out.append("\t".join(["total"] + cells))
        return "\n".join(out) + "\n"


def write_summary(summary: RunSummary, path) -> None:
    Path(path).write_text(summary.to_text(), encoding="utf-8")


def unfairness_table(
    slot_reports: dict[int, UnfairnessReport | None],
    pair_labels: list[tuple[str, str]],
) -> RunSummary:
    """Hourly pairwise distances with the arg-max pair starred per row.

    ``slot_reports`` maps every hour to a report or None for inactive hours,
    which render as zero rows.  A totals row sums each pair column; its
    largest entry is starred.
    """
    columns = [f"d_{a}{b}" for a, b in pair_labels]
    rows, labels, flags = [], [], set()
    for h in sorted(slot_reports):
        rep = slot_reports[h]
        labels.append(f"{h:02d}:00")
        if rep is None:
            rows.append([0.0] * len(pair_labels))
            continue
        row = [rep.distance(a, b) for a, b in pair_labels]
        rows.append(row)
        if rep.d_max > 0:
            flags.add((len(rows) - 1, pair_labels.index(rep.argmax_pair)
                       if rep.argmax_pair in pair_labels
                       else pair_labels.index(tuple(reversed(rep.argmax_pair)))))
    totals = [float(sum(r[c] for r in rows)) for c in range(len(columns))]
    totals_flags = {int(np.argmax(totals))} if any(totals) else set()
    return RunSummary(
        "unfairness level per slot (kWh)", columns, labels, rows, totals,
        flags, totals_flags,
    )


def sweep_table(
    ref_by_slot: dict[int, float],
    outcomes: dict[str, dict[int, FairOutcome]],
    tol: float = 0.01,
    title: str = "unfairness level by sacrifice level (kWh)",
) -> RunSummary:
    """Per-slot unfairness across sweep points, plateau starred per row.

    Columns are the reference followed by the sweep points in their given
    order.  The star marks the first point beyond which that slot's level
    never again improves by more than ``tol`` (the attainable-fairness limit).
    """
    points = list(outcomes)
    columns = ["ref"] + points
    labels, rows, flags = [], [], set()
    for h in sorted(ref_by_slot):
        labels.append(f"{h:02d}:00")
        row = [ref_by_slot[h]]
        for p in points:
            out = outcomes[p].get(h)
            row.append(float("nan") if out is None or out.d_max is None else out.d_max)
        rows.append(row)
        # plateau = first sweep point whose tail never improves by more than tol
        vals = row[1:]
        plateau = 0
        while plateau < len(vals) - 1:
            tail = [v for v in vals[plateau + 1:] if not np.isnan(v)]
            if tail and not np.isnan(vals[plateau]) and vals[plateau] - min(tail) > tol:
                plateau += 1
            else:
                break
        flags.add((len(rows) - 1, plateau + 1))
    totals = [float(np.nansum([r[c] for r in rows])) for c in range(len(columns))]
    return RunSummary(title, columns, labels, rows, totals, flags)


def timing_table(
    ref_seconds: dict[int, float],
    fair_seconds: dict[str, dict[int, float]],
) -> RunSummary:
    """Wall times per slot and sweep point, with a final averages row."""
    points = list(fair_seconds)
    columns = ["ref"] + points
    labels, rows = [], []
    for h in sorted(ref_seconds):
        labels.append(f"{h:02d}:00")
        row = [ref_seconds[h]]
        for p in points:
            row.append(fair_seconds[p].get(h, float("nan")))
        rows.append(row)
    averages = [float(np.nanmean([r[c] for r in rows])) for c in range(len(columns))]
    return RunSummary(
        "wall time per clearing (s)", columns, labels, rows, averages, decimals=2
    )


def export_trace(path, outcome: FairOutcome) -> None:
    """One row per alternating pass: both unfairness estimates and timing."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter\td1\td2\tobjective\tseconds\n")
        for r in outcome.trace:
            fh.write(
                f"{r.iteration}\t{r.d1!r}\t{r.d2!r}\t{r.objective!r}\t{r.seconds:.3f}\n"
            )
        fh.write(f"# converged {outcome.converged} iterations {outcome.iterations}\n")


def import_trace(path) -> tuple[list[IterationRow], bool]:
    rows: list[IterationRow] = []
    converged = False
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line.startswith("# converged"):
                converged = line.split()[2] == "True"
                continue
            if not line or line.startswith("iter"):
                continue
            parts = line.split("\t")
            rows.append(
                IterationRow(int(parts[0]), float(parts[1]), float(parts[2]),
                             float(parts[3]), {}, float(parts[4]))
            )
    return rows, converged


def write_distribution_data(path, distributions: list[TradeDistribution]) -> None:
    """Per-group traded-energy samples, ready for any histogram tool."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group\tpeer\ttraded_kwh\n")
        for dist in distributions:
            for pid, v in zip(dist.member_ids, dist.totals):
                fh.write(f"{dist.group}\t{pid}\t{float(v)!r}\n")


def render_histograms(path_prefix, distributions: list[TradeDistribution]) -> list[str]:
    """Optional PNG histograms; requires matplotlib, returns written paths."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # plots are an optional extra
        raise RuntimeError("matplotlib is required for rendered plots") from exc
    written = []
    for dist in distributions:
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.hist(dist.totals, bins=20, color="tab:blue", alpha=0.8)
        ax.set_xlabel("traded energy (kWh)")
        ax.set_ylabel("households")
        ax.set_title(f"group {dist.group}")
        fig.tight_layout()
        out = f"{path_prefix}_{dist.group}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written
