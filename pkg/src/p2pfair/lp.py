"""General linear programs and a bounded-variable revised simplex solver.

Every optimization in this package (market clearing, transport plans, the
fair redistribution model) is stated as an :class:`LpProblem` and solved
through :func:`solve`.  The solver is a two-phase revised simplex with
explicit basis-inverse updates, bound flips, and a Bland-rule fallback for
anti-cycling.  It is deterministic: identical problems produce identical
pivot sequences and therefore identical optimal vertices.

Debugging aid: :func:`dump_lp_text` writes a problem in a plain-text format
(one variable / constraint per line, see the function docstring) that can be
diffed or fed to external tools.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

__all__ = [
    "LE",
    "EQ",
    "GE",
    "LpProblem",
    "LpSolution",
    "LpStatus",
    "Violation",
    "check_feasible",
    "default_max_iters",
    "dump_lp_text",
    "solve",
]

LE = "<="
EQ = "="
GE = ">="

_RELATIONS = (LE, EQ, GE)

# Pivot/pricing tolerances.  feas_tol (user-facing) governs feasibility
# acceptance; these govern pivot selection and are deliberately tighter.
_DJ_TOL = 1e-9
_PIVOT_TOL = 1e-9
_RATIO_TIE_TOL = 1e-9
_REFACTOR_EVERY = 80  # maximum eta-chain length before refactorizing
_STALL_LIMIT = 120  # consecutive degenerate pivots before a Bland burst
_BLAND_BURST = 50  # burst length; long Bland runs crawl on market LPs
_DESPERATE_STALL = 200_000  # degenerate pivots without progress before
                            # switching to pure Bland, whose no-cycling
                            # guarantee then ensures termination


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass
class _Constraint:
    indices: np.ndarray
    coefs: np.ndarray
    relation: str
    rhs: float
    label: str = ""


class LpProblem:
    """A linear program: bounded variables, linear objective, sparse rows.

    Variables are added with :meth:`add_variable` (returning their index) and
    constraints with :meth:`add_constraint`.  Bounds may be ``-inf``/``inf``.
    """

    def __init__(self, sense: str = "min", name: str = ""):
        if sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
        self.sense = sense
        self.name = name
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.objective: list[float] = []
        self.var_names: list[str] = []
        self.constraints: list[_Constraint] = []

    @property
    def n_vars(self) -> int:
        return len(self.lower)

    @property
    def n_rows(self) -> int:
        return len(self.constraints)

    def add_variable(self, lower=0.0, upper=np.inf, objective=0.0, name="") -> int:
        if lower > upper:
            raise ValueError(f"variable {name or self.n_vars}: lower {lower} > upper {upper}")
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.objective.append(float(objective))
        self.var_names.append(name or f"x{self.n_vars - 1}")
        return self.n_vars - 1

    def add_constraint(self, terms, relation: str, rhs: float, label: str = "") -> int:
        """Add a row.  ``terms`` is an iterable of ``(var_index, coefficient)``."""
        if relation not in _RELATIONS:
            raise ValueError(f"unknown relation {relation!r}")
        idx, coef = [], []
        seen: dict[int, int] = {}
        for j, a in terms:
            if not 0 <= j < self.n_vars:
                raise ValueError(f"constraint references undeclared variable {j}")
            if a == 0.0:
                continue
            if j in seen:  # merge duplicate references
                coef[seen[j]] += float(a)
            else:
                seen[j] = len(idx)
                idx.append(j)
                coef.append(float(a))
        self.constraints.append(
            _Constraint(np.asarray(idx, dtype=np.intp), np.asarray(coef), relation, float(rhs), label)
        )
        return self.n_rows - 1

    def validate(self) -> None:
        lo, up = np.asarray(self.lower), np.asarray(self.upper)
        if np.any(lo > up):
            bad = int(np.argmax(lo > up))
            raise ValueError(f"variable {self.var_names[bad]}: lower bound exceeds upper bound")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)) or np.any(np.isnan(self.objective)):
            raise ValueError("NaN in bounds or objective")
        for k, c in enumerate(self.constraints):
            if np.any(np.isnan(c.coefs)) or np.isnan(c.rhs):
                raise ValueError(f"NaN in constraint {k}")


@dataclass
class LpSolution:
    status: LpStatus
    objective: float | None
    x: np.ndarray | None
    iterations: int = 0
    # rows that could not be made feasible (index, residual), set when infeasible
    infeasible_rows: list[tuple[int, float]] = field(default_factory=list)

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass(frozen=True)
class Violation:
    kind: str  # "lower", "upper", or "row"
    index: int  # variable index for bounds, constraint index for rows
    amount: float


def default_max_iters(problem: LpProblem) -> int:
    # 50*(vars+rows): generous for the degenerate market LPs built here.
    return 50 * (problem.n_vars + problem.n_rows)


def check_feasible(problem: LpProblem, point, tol: float = 1e-7) -> list[Violation]:
    """Return every bound/constraint violated by ``point`` beyond ``tol``.

    The empty list means the point is feasible to within ``tol``.  This path
    is independent of the simplex machinery and is used to audit solutions.
    """
    x = np.asarray(point, dtype=float)
    if x.shape != (problem.n_vars,):
        raise ValueError(f"point has shape {x.shape}, expected ({problem.n_vars},)")
    out: list[Violation] = []
    lo, up = np.asarray(problem.lower), np.asarray(problem.upper)
    for j in np.nonzero(x < lo - tol)[0]:
        out.append(Violation("lower", int(j), float(lo[j] - x[j])))
    for j in np.nonzero(x > up + tol)[0]:
        out.append(Violation("upper", int(j), float(x[j] - up[j])))
    for k, c in enumerate(problem.constraints):
        lhs = float(x[c.indices] @ c.coefs) if len(c.indices) else 0.0
        gap = lhs - c.rhs
        if c.relation == LE and gap > tol:
            out.append(Violation("row", k, gap))
        elif c.relation == GE and gap < -tol:
            out.append(Violation("row", k, -gap))
        elif c.relation == EQ and abs(gap) > tol:
            out.append(Violation("row", k, abs(gap)))
    return out


def dump_lp_text(problem: LpProblem, path) -> None:
    """Write a plain-text rendering of the problem.

    Format: a ``minimize``/``maximize`` line with one ``coef*name`` term per
    variable with nonzero cost; one ``bound: lo <= name <= hi`` line per
    variable; one ``row k [label]: sum(coef*name) REL rhs`` line per
    constraint.  Meant for eyeballing and cross-checks, not re-parsing.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{'maximize' if problem.sense == 'max' else 'minimize'}")
        terms = [
            f" {c:+.12g}*{problem.var_names[j]}"
            for j, c in enumerate(problem.objective)
            if c != 0.0
        ]
        fh.write("".join(terms) + "\n")
        for j in range(problem.n_vars):
            fh.write(
                f"bound: {problem.lower[j]:.12g} <= {problem.var_names[j]}"
                f" <= {problem.upper[j]:.12g}\n"
            )
        for k, c in enumerate(problem.constraints):
            lhs = " ".join(
                f"{a:+.12g}*{problem.var_names[j]}" for j, a in zip(c.indices, c.coefs)
            )
            tag = f" [{c.label}]" if c.label else ""
            fh.write(f"row {k}{tag}: {lhs} {c.relation} {c.rhs:.12g}\n")


# ---------------------------------------------------------------------------
# Revised simplex engine
# ---------------------------------------------------------------------------

_BASIC = 0
_AT_LOWER = 1
_AT_UPPER = 2


class _Simplex:
    """Bounded-variable two-phase revised simplex on ``A x = b``.

    Columns: the problem's structural variables, one logical column per row
    (slack for inequalities, fixed at zero for equalities), and artificial
    columns for rows whose crash residual the logical cannot absorb.  The
    basis is kept as a sparse LU factorization plus a chain of product-form
    eta updates; periodic refactorization bounds both drift and chain length.
    The bases of the market LPs built here stay sparse, so the factors are a
    few hundred kilobytes where an explicit inverse would be megabytes.
    """

    def __init__(self, problem: LpProblem, feas_tol: float, max_iters: int):
        self.feas_tol = feas_tol
        self.max_iters = max_iters
        self.iterations = 0

        n, m = problem.n_vars, problem.n_rows
        self.n_struct = n
        self.m = m

        rows_i, cols_i, vals = [], [], []
        for k, c in enumerate(problem.constraints):
            rows_i.extend([k] * len(c.indices))
            cols_i.extend(c.indices.tolist())
            vals.extend(c.coefs.tolist())
        b = np.array([c.rhs for c in problem.constraints], dtype=float)

        lower = list(problem.lower)
        upper = list(problem.upper)

        # logical column per row
        self.logical = np.arange(n, n + m)
        for k, c in enumerate(problem.constraints):
            rows_i.append(k)
            cols_i.append(n + k)
            vals.append(1.0)
            if c.relation == LE:
                lower.append(0.0)
                upper.append(np.inf)
            elif c.relation == GE:
                lower.append(-np.inf)
                upper.append(0.0)
            else:
                lower.append(0.0)
                upper.append(0.0)

        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.b = b

        # crash: nonbasics at the finite bound nearest zero
        x = np.zeros(n + m)
        status = np.full(n + m, _AT_LOWER, dtype=np.int8)
        for j in range(n + m):
            lo, hi = self.lower[j], self.upper[j]
            if np.isfinite(lo) and np.isfinite(hi):
                if abs(lo) <= abs(hi):
                    x[j], status[j] = lo, _AT_LOWER
                else:
                    x[j], status[j] = hi, _AT_UPPER
            elif np.isfinite(lo):
                x[j], status[j] = lo, _AT_LOWER
            elif np.isfinite(hi):
                x[j], status[j] = hi, _AT_UPPER
            else:
                x[j], status[j] = 0.0, _AT_LOWER  # free, parked at zero

        A0 = sps.csc_matrix(
            (vals, (rows_i, cols_i)), shape=(m, n + m), dtype=float
        )
        resid = b - A0[:, :n] @ x[:n]

        # basis: logical where the residual fits its bounds, else artificial
        basis = np.empty(m, dtype=np.intp)
        art_rows: list[int] = []
        art_signs: list[float] = []
        for k in range(m):
            lo, hi = self.lower[n + k], self.upper[n + k]
            if lo - 1e-12 <= resid[k] <= hi + 1e-12:
                basis[k] = n + k
                x[n + k] = resid[k]
            else:
                art_rows.append(k)
                art_signs.append(1.0 if resid[k] >= 0 else -1.0)

        self.n_art = len(art_rows)
        if self.n_art:
            art_cols = sps.csc_matrix(
                (art_signs, (art_rows, np.arange(self.n_art))),
                shape=(m, self.n_art),
            )
            self.A = sps.hstack([A0, art_cols], format="csc")
            self.lower = np.concatenate([self.lower, np.zeros(self.n_art)])
            self.upper = np.concatenate([self.upper, np.full(self.n_art, np.inf)])
            x = np.concatenate([x, np.zeros(self.n_art)])
            status = np.concatenate(
                [status, np.full(self.n_art, _AT_LOWER, dtype=np.int8)]
            )
            for t, (k, s) in enumerate(zip(art_rows, art_signs)):
                basis[k] = n + m + t
                x[n + m + t] = resid[k] * s  # = |resid|, feasible
        else:
            self.A = A0

        self.n_total = self.A.shape[1]
        self.x = x
        self.status = status
        self.basis = basis
        self.in_basis = np.zeros(self.n_total, dtype=bool)
        self.in_basis[basis] = True
        self.fixed = self.lower == self.upper
        # column cache: per-column row indices and values for fast FTRAN
        self._col_rows = [
            self.A.indices[self.A.indptr[j]:self.A.indptr[j + 1]].copy()
            for j in range(self.n_total)
        ]
        self._col_vals = [
            self.A.data[self.A.indptr[j]:self.A.indptr[j + 1]].copy()
            for j in range(self.n_total)
        ]
        self._at = self.A.T.tocsr()
        # static column scales temper the most-violating pricing rule
        norms = np.sqrt(np.asarray(self.A.multiply(self.A).sum(axis=0)).ravel())
        self._pricing_scale = 1.0 / np.maximum(norms, 1.0)
        self._lu = None
        self._etas: list[tuple[int, np.ndarray]] = []
        self._refactorize()

    # -- linear algebra helpers --------------------------------------------

    def _refactorize(self) -> None:
        B = sps.csc_matrix(self.A[:, self.basis])
        try:
            self._lu = spsla.splu(B)
        except RuntimeError as exc:  # cannot occur with valid bases
            raise RuntimeError("singular basis encountered") from exc
        self._etas = []
        self._recompute_basics()

    def _recompute_basics(self) -> None:
        xn = self.x.copy()
        xn[self.in_basis] = 0.0
        rhs = self.b - self.A @ xn
        self.x[self.basis] = self._lu.solve(rhs)

    def _ftran_vec(self, v: np.ndarray) -> np.ndarray:
        """Solve B z = v through the factorization and the eta chain."""
        z = self._lu.solve(v)
        for r, w in self._etas:
            alpha = z[r] / w[r]
            if alpha != 0.0:
                z -= alpha * w
            z[r] = alpha
        return z

    def _ftran(self, j: int) -> np.ndarray:
        v = np.zeros(self.m)
        v[self._col_rows[j]] = self._col_vals[j]
        return self._ftran_vec(v)

    def _btran(self, c: np.ndarray) -> np.ndarray:
        """Solve B^T y = c through the eta chain (reversed) and the factors."""
        c = c.copy()
        for r, w in reversed(self._etas):
            beta = (w @ c - c[r]) / w[r]
            c[r] -= beta
        return self._lu.solve(c, trans="T")

    # -- pivoting ------------------------------------------------------------

    def _price(self, costs: np.ndarray, bland: bool):
        y = self._btran(costs[self.basis])
        z = costs - self._at @ y
        cand_lo = (~self.in_basis) & (~self.fixed) & (self.status == _AT_LOWER) & (z < -_DJ_TOL)
        cand_up = (~self.in_basis) & (~self.fixed) & (self.status == _AT_UPPER) & (z > _DJ_TOL)
        free = (~self.in_basis) & (~self.fixed) & ~np.isfinite(self.lower) & ~np.isfinite(self.upper)
        cand_fr = free & (np.abs(z) > _DJ_TOL)
        candidates = np.nonzero(cand_lo | cand_up | cand_fr)[0]
        if len(candidates) == 0:
            return None, 0.0
        if bland:
            q = int(candidates[0])
        else:
            scores = np.abs(z[candidates]) * self._pricing_scale[candidates]
            q = int(candidates[np.argmax(scores)])
        direction = 1.0 if z[q] < 0 else -1.0
        return q, direction

    def _ratio_test(self, q: int, direction: float, bland: bool):
        w = self._ftran(q)
        delta = direction * w
        xb = self.x[self.basis]
        lo_b = self.lower[self.basis]
        up_b = self.upper[self.basis]

        inc = delta > _PIVOT_TOL
        dec = delta < -_PIVOT_TOL
        ratios = np.full(self.m, np.inf)
        ratios[inc] = (xb[inc] - lo_b[inc]) / delta[inc]
        ratios[dec] = (xb[dec] - up_b[dec]) / delta[dec]
        ratios = np.maximum(ratios, 0.0)  # degenerate: never step backwards

        span = self.upper[q] - self.lower[q]  # inf for unbounded/free spans
        t_basic = ratios.min() if self.m else np.inf
        if t_basic == np.inf and span == np.inf:
            return None  # unbounded
        if span <= t_basic:
            return ("flip", span, w)
        tie = np.nonzero(ratios <= t_basic + _RATIO_TIE_TOL)[0]
        if bland:
            r = int(tie[np.argmin(self.basis[tie])])
        else:
            r = int(tie[np.argmax(np.abs(delta[tie]))])
        return ("pivot", float(ratios[r]), w, r)

    def _apply_flip(self, q: int, span: float, w: np.ndarray, direction: float) -> None:
        self.x[self.basis] -= direction * span * w
        self.x[q] += direction * span
        self.status[q] = _AT_UPPER if self.status[q] == _AT_LOWER else _AT_LOWER

    def _apply_pivot(self, q, direction, t, w, r) -> bool:
        pivot = w[r]
        if abs(pivot) < 1e-11:
            return False
        leaving = self.basis[r]
        self.x[self.basis] -= direction * t * w
        self.x[q] += direction * t
        # snap the leaving variable onto the bound it hit
        self.x[leaving] = self.lower[leaving] if direction * pivot > 0 else self.upper[leaving]
        self.status[leaving] = (
            _AT_LOWER if self.x[leaving] == self.lower[leaving] else _AT_UPPER
        )
        self.in_basis[leaving] = False
        self.basis[r] = q
        self.in_basis[q] = True
        self.status[q] = _BASIC
        self._etas.append((r, w.copy()))
        return True

    def run(self, costs: np.ndarray) -> str:
        """Minimize ``costs @ x`` from the current basis.  Returns a status.

        Anti-cycling: after a run of degenerate pivots the pricing drops to
        Bland's rule for a short burst, then returns to the scaled
        most-violating rule (long pure-Bland runs crawl on these highly tied
        LPs).  Should the degenerate streak ever become extreme, the engine
        commits to Bland permanently, whose no-cycling guarantee ensures
        termination.
        """
        bland_left = 0
        stall = 0
        desperate = 0
        while True:
            if self.iterations >= self.max_iters:
                return "iteration_limit"
            bland = bland_left > 0 or desperate >= _DESPERATE_STALL
            q, direction = self._price(costs, bland)
            if q is None:
                return "optimal"
            step = self._ratio_test(q, direction, bland)
            if step is None:
                return "unbounded"
            self.iterations += 1
            if bland_left > 0:
                bland_left -= 1
            progressed = False
            if step[0] == "flip":
                _, span, w = step
                self._apply_flip(q, span, w, direction)
                progressed = span > 1e-12
            else:
                _, t, w, r = step
                if not self._apply_pivot(q, direction, t, w, r):
                    self._refactorize()
                    continue
                progressed = t > 1e-12
            if progressed:
                stall = 0
                bland_left = 0
                desperate = 0
            else:
                stall += 1
                desperate += 1
                if stall >= _STALL_LIMIT and bland_left == 0:
                    bland_left = _BLAND_BURST
                    stall = 0
            if len(self._etas) >= _REFACTOR_EVERY:
                self._refactorize()

    # -- phases ---------------------------------------------------------------

    def _jitter(self) -> np.ndarray:
        # deterministic per-column hair used to break massive cost ties
        return (np.arange(self.n_total, dtype=np.int64) * 2654435761 % 1013) / 1013.0

    def solve(self, user_costs: np.ndarray, sense: str):
        if self.n_art:
            phase1 = np.zeros(self.n_total)
            phase1[self.n_struct + self.m:] = 1.0
            st = self.run(phase1 + 1e-11 * (1.0 + self._jitter()))
            if st != "iteration_limit":
                st = self.run(phase1)  # polish at exact phase-1 costs
            if st == "iteration_limit":
                return LpStatus.ITERATION_LIMIT, None
            if st == "unbounded":  # phase-1 objective is bounded below by 0
                raise RuntimeError("phase-1 subproblem reported unbounded")
            self._refactorize()
            infeas = float(phase1 @ self.x)
            if infeas > self.feas_tol * (1.0 + np.abs(self.b).max(initial=0.0)):
                rows = [
                    (self._art_row(j), float(self.x[j]))
                    for j in range(self.n_struct + self.m, self.n_total)
                    if self.in_basis[j] and self.x[j] > self.feas_tol
                ]
                return LpStatus.INFEASIBLE, rows
            # freeze artificials at zero for phase 2
            self.lower[self.n_struct + self.m:] = 0.0
            self.upper[self.n_struct + self.m:] = 0.0
            self.fixed[self.n_struct + self.m:] = True
            self.x[self.n_struct + self.m:][~self.in_basis[self.n_struct + self.m:]] = 0.0

        costs = np.zeros(self.n_total)
        sign = 1.0 if sense == "min" else -1.0
        costs[: self.n_struct] = sign * user_costs

        # market LPs carry thousands of identical bids, so the exact costs are
        # massively tied; a deterministic hair of perturbation breaks the ties
        # and avoids degenerate crawls.  The exact-cost run afterwards
        # certifies (and if needed restores) a true optimum.
        scale = 1e-11 * (1.0 + float(np.abs(costs).max(initial=0.0)))
        st = self.run(costs + scale * (1.0 + self._jitter()))
        if st == "iteration_limit":
            return LpStatus.ITERATION_LIMIT, None
        if st != "unbounded":
            st = self.run(costs)
        if st == "iteration_limit":
            return LpStatus.ITERATION_LIMIT, None
        if st == "unbounded":
            return LpStatus.UNBOUNDED, None
        self._refactorize()  # final cleanup solve for tight residuals
        return LpStatus.OPTIMAL, None

    def _art_row(self, col: int) -> int:
        # artificial columns have exactly one entry; its row index
        start = self.A.indptr[col]
        return int(self.A.indices[start])


def solve(problem: LpProblem, feas_tol: float = 1e-7, max_iters: int | None = None) -> LpSolution:
    """Solve ``problem``, returning status, objective, and a primal point.

    Optimal solutions satisfy every bound and constraint to within
    ``feas_tol``; infeasible and unbounded problems are reported as such.
    ``max_iters`` (default ``50*(n_vars+n_rows)``) bounds total pivots across
    both phases; exceeding it yields ``LpStatus.ITERATION_LIMIT``.
    """
    problem.validate()
    if max_iters is None:
        max_iters = default_max_iters(problem)
    if problem.n_rows == 0 and problem.n_vars == 0:
        return LpSolution(LpStatus.OPTIMAL, 0.0, np.zeros(0))

    engine = _Simplex(problem, feas_tol, max_iters)
    costs = np.asarray(problem.objective, dtype=float)
    status, infeas_rows = engine.solve(costs, problem.sense)

    if status is LpStatus.OPTIMAL:
        x = engine.x[: problem.n_vars].copy()
        # clip solver dust so bound checks at feas_tol are clean
        lo, up = np.asarray(problem.lower), np.asarray(problem.upper)
        x = np.minimum(np.maximum(x, np.where(np.isfinite(lo), lo, x)), np.where(np.isfinite(up), up, x))
        return LpSolution(status, float(costs @ x), x, engine.iterations)
    if status is LpStatus.INFEASIBLE:
        return LpSolution(status, None, None, engine.iterations, infeas_rows or [])
    if status is LpStatus.ITERATION_LIMIT:
        return LpSolution(status, None, engine.x[: problem.n_vars].copy(), engine.iterations)
    return LpSolution(status, None, None, engine.iterations)
