import numpy as np
import pytest
from scipy.optimize import linprog

from avgctl.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, FiniteLP, solve_finite_lp

from oracles import random_lp, vertex_enumeration


def test_single_variable():
    res = solve_finite_lp(FiniteLP([1.0], [[1.0]], ["<="], [1.0]))
    assert res.status == OPTIMAL
    assert res.value == pytest.approx(1.0, abs=1e-12)


def test_two_variables():
    res = solve_finite_lp(FiniteLP([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], ["<=", "<="], [1.0, 2.0]))
    assert res.status == OPTIMAL
    assert res.value == pytest.approx(3.0, abs=1e-12)
    assert np.allclose(res.x, [1.0, 2.0], atol=1e-12)


def test_minimization_and_free_variables():
    lp = FiniteLP([1.0, -1.0], [[1.0, 1.0], [1.0, -1.0]], [">=", "="], [1.0, 3.0], bounds=[(None, None), (None, None)], maximize=False)
    res = solve_finite_lp(lp)
    # x - y = 3 fixes the objective
    assert res.status == OPTIMAL and res.value == pytest.approx(3.0, abs=1e-12)


def test_infeasible_and_unbounded():
    bad = FiniteLP([1.0], [[1.0], [1.0]], ["<=", ">="], [1.0, 2.0])
    assert solve_finite_lp(bad).status == INFEASIBLE
    ray = FiniteLP([1.0, 1.0], [[1.0, -1.0]], ["<="], [1.0])
    assert solve_finite_lp(ray).status == UNBOUNDED


def _check_solution(c, A, senses, b, bounds, res):
    x = res.x
    Ax = np.asarray(A) @ x
    for row, s, rhs in zip(Ax, senses, b):
        if s == "<=":
            assert row <= rhs + 1e-9
        elif s == ">=":
            assert row >= rhs - 1e-9
        else:
            assert abs(row - rhs) <= 1e-9
    for xi, (lo, hi) in zip(x, bounds):
        assert lo - 1e-9 <= xi <= hi + 1e-9
    # complementary slackness on the rows
    slack = np.asarray(b) - Ax
    assert np.all(np.abs(res.duals * slack) <= 1e-8)


def test_random_against_vertex_enumeration():
    rng = np.random.default_rng(20240611)
    checked = 0
    for _ in range(100):
        c, A, senses, b, bounds = random_lp(rng)
        ref = vertex_enumeration(c, A, senses, b, bounds)
        res = solve_finite_lp(FiniteLP(c, A, senses, b, bounds=bounds))
        if ref is None:
            assert res.status == INFEASIBLE
            continue
        assert res.status == OPTIMAL
        assert res.value == pytest.approx(ref, abs=1e-7)
        _check_solution(c, A, senses, b, bounds, res)
        checked += 1
    assert checked >= 50


def test_random_feasible_by_construction():
    rng = np.random.default_rng(314)
    for _ in range(100):
        c, A, senses, b, bounds = random_lp(rng, feasible=True)
        ref = vertex_enumeration(c, A, senses, b, bounds)
        res = solve_finite_lp(FiniteLP(c, A, senses, b, bounds=bounds))
        assert ref is not None and res.status == OPTIMAL
        assert res.value == pytest.approx(ref, abs=1e-7)
        _check_solution(c, A, senses, b, bounds, res)


def test_random_against_reference_solver():
    rng = np.random.default_rng(99)
    for _ in range(60):
        n, m = 6, 10
        A = rng.normal(size=(m, n))
        b = rng.uniform(0.1, 2.0, m)
        c = rng.normal(size=n)
        res = solve_finite_lp(FiniteLP(c, A, ["<="] * m, b, bounds=[(0.0, 5.0)] * n))
        ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(0.0, 5.0)] * n, method="highs")
        assert res.status == OPTIMAL
        assert res.value == pytest.approx(-ref.fun, abs=1e-7)


def test_degenerate_problem():
    # many constraints through the optimal vertex
    A = [[1.0, 1.0], [1.0, 2.0], [2.0, 1.0], [1.0, 0.0], [0.0, 1.0]]
    res = solve_finite_lp(FiniteLP([1.0, 1.0], A, ["<="] * 5, [2.0, 3.0, 3.0, 1.0, 1.0]))
    assert res.status == OPTIMAL and res.value == pytest.approx(2.0, abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        FiniteLP([1.0, 2.0], [[1.0]], ["<="], [1.0])
