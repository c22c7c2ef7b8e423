import numpy as np
import pytest

from p2pfair import lp

from oracles import best_vertex_objective, random_feasible_lp


def make_simple(sense, bounds, rows, objective):
    prob = lp.LpProblem(sense=sense)
    for (lo, hi), c in zip(bounds, objective):
        prob.add_variable(lo, hi, objective=c)
    for terms, rel, rhs in rows:
        prob.add_constraint(terms, rel, rhs)
    return prob


def test_single_variable_bound():
    # max x s.t. x <= 3, x >= 0
    prob = make_simple("max", [(0, np.inf)], [([(0, 1.0)], lp.LE, 3.0)], [1.0])
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(3.0, abs=1e-9)
    assert sol.x[0] == pytest.approx(3.0, abs=1e-9)


def test_active_constraint_split():
    # min x+y s.t. x+y >= 2, x,y >= 0 -> objective 2, any split
    prob = make_simple(
        "min",
        [(0, np.inf), (0, np.inf)],
        [([(0, 1.0), (1, 1.0)], lp.GE, 2.0)],
        [1.0, 1.0],
    )
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(2.0, abs=1e-9)
    assert sol.x.sum() == pytest.approx(2.0, abs=1e-9)


def test_two_variable_vertex():
    # min -x-2y s.t. x+y <= 4, x <= 3, x,y >= 0 -> -8 at (0, 4)
    prob = make_simple(
        "min",
        [(0, 3.0), (0, np.inf)],
        [([(0, 1.0), (1, 1.0)], lp.LE, 4.0)],
        [-1.0, -2.0],
    )
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(-8.0, abs=1e-9)
    assert sol.x == pytest.approx([0.0, 4.0], abs=1e-9)
    assert best_vertex_objective(prob) == pytest.approx(-8.0)


def test_infeasible_reported():
    prob = make_simple(
        "min",
        [(0, 1.0)],
        [([(0, 1.0)], lp.GE, 2.0)],
        [1.0],
    )
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.INFEASIBLE
    assert sol.infeasible_rows  # names the offending row
    assert sol.infeasible_rows[0][0] == 0


def test_unbounded_reported():
    prob = make_simple("max", [(0, np.inf)], [], [1.0])
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.UNBOUNDED


def test_iteration_limit():
    rng = np.random.default_rng(3)
    prob = random_feasible_lp(rng, 6, 6)
    sol = lp.solve(prob, max_iters=1)
    assert sol.status in (lp.LpStatus.ITERATION_LIMIT, lp.LpStatus.OPTIMAL)
    forced = lp.solve(prob, max_iters=0)
    assert forced.status is lp.LpStatus.ITERATION_LIMIT


def test_malformed_rejected():
    prob = lp.LpProblem()
    prob.add_variable(0.0, 1.0)
    with pytest.raises(ValueError):
        prob.add_constraint([(5, 1.0)], lp.LE, 1.0)
    with pytest.raises(ValueError):
        prob.add_variable(2.0, 1.0)


def test_equality_row_and_free_variable():
    # free variable pushed negative by an equality; min x+2y = -3+y at y=0
    prob = lp.LpProblem(sense="min")
    x = prob.add_variable(-np.inf, np.inf, objective=1.0)
    y = prob.add_variable(0.0, np.inf, objective=2.0)
    prob.add_constraint([(x, 1.0), (y, 1.0)], lp.EQ, -3.0)
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(-3.0, abs=1e-9)
    assert sol.objective == pytest.approx(-3.0, abs=1e-9)


def test_redundant_equalities():
    # duplicated equality rows: phase 1 must tolerate the dependent row
    prob = lp.LpProblem(sense="min")
    x = prob.add_variable(0.0, np.inf, objective=1.0)
    y = prob.add_variable(0.0, np.inf, objective=2.0)
    prob.add_constraint([(x, 1.0), (y, 1.0)], lp.EQ, 2.0)
    prob.add_constraint([(x, 1.0), (y, 1.0)], lp.EQ, 2.0)
    prob.add_constraint([(x, 2.0), (y, 2.0)], lp.EQ, 4.0)
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(2.0, abs=1e-8)


def test_check_feasible_examples():
    prob = make_simple("min", [(0, np.inf)], [([(0, 1.0)], lp.LE, 3.0)], [0.0])
    assert lp.check_feasible(prob, [3.0], tol=1e-9) == []
    bad = lp.check_feasible(prob, [3.5], tol=1e-9)
    assert [(v.kind, v.index) for v in bad] == [("row", 0)]

    eq = make_simple(
        "min", [(0, np.inf), (0, np.inf)], [([(0, 1.0), (1, 1.0)], lp.EQ, 2.0)], [0.0, 0.0]
    )
    assert lp.check_feasible(eq, [1.0, 1.0], tol=1e-9) == []
    with pytest.raises(ValueError):
        lp.check_feasible(eq, [1.0], tol=1e-9)


def test_bound_violations_reported():
    prob = make_simple("min", [(1.0, 2.0)], [], [0.0])
    viols = lp.check_feasible(prob, [0.5], tol=1e-9)
    assert [(v.kind, v.index) for v in viols] == [("lower", 0)]
    viols = lp.check_feasible(prob, [2.5], tol=1e-9)
    assert [(v.kind, v.index) for v in viols] == [("upper", 0)]


def test_solve_matches_vertex_enumeration_randomized():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(120):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 7))
        prob = random_feasible_lp(rng, n, m)
        sol = lp.solve(prob)
        assert sol.status is lp.LpStatus.OPTIMAL, f"unexpected {sol.status}"
        oracle = best_vertex_objective(prob)
        assert oracle is not None
        assert sol.objective == pytest.approx(oracle, abs=1e-6), (
            f"simplex {sol.objective} vs oracle {oracle}"
        )
        assert lp.check_feasible(prob, sol.x, tol=1e-7) == []
        checked += 1
    assert checked == 120


def test_duality_sanity_never_improvable():
    # no enumerated vertex beats the reported optimum
    from oracles import enumerate_vertices

    rng = np.random.default_rng(7)
    for _ in range(40):
        prob = random_feasible_lp(rng, int(rng.integers(2, 6)), int(rng.integers(1, 6)))
        sol = lp.solve(prob)
        assert sol.status is lp.LpStatus.OPTIMAL
        _, objs = enumerate_vertices(prob)
        if prob.sense == "max":
            assert max(objs) <= sol.objective + 1e-6
        else:
            assert min(objs) >= sol.objective - 1e-6


def test_degenerate_ties_terminate():
    # many identical rows/costs: anti-cycling must still terminate
    prob = lp.LpProblem(sense="max")
    for _ in range(8):
        prob.add_variable(0.0, 1.0, objective=1.0)
    for _ in range(6):
        prob.add_constraint([(j, 1.0) for j in range(8)], lp.LE, 4.0)
    sol = lp.solve(prob)
    assert sol.status is lp.LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(4.0, abs=1e-8)


def test_dump_lp_text(tmp_path):
    prob = make_simple("max", [(0, 3.0)], [([(0, 1.0)], lp.LE, 3.0)], [1.0])
    out = tmp_path / "toy.lp"
    lp.dump_lp_text(prob, out)
    text = out.read_text()
    assert "maximize" in text
    assert "row 0" in text
    assert "<= 3" in text
