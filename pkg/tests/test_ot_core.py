import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twostep.errors import BalanceError, MultivaluedMapError, SizeError, ValidationError
from twostep.measures import DiscreteMeasure
from twostep.ot_core import (CostMatrix, plan_to_map, solve_entropic, solve_exact,
                             solve_monotone_1d)


def brute_force(C, maximize=False):
    n = C.shape[0]
    best, arg = None, None
    for p in itertools.permutations(range(n)):
        v = C[np.arange(n), p].sum() / n
        if best is None or (v > best if maximize else v < best):
            best, arg = v, p
    return best, arg


def uniform(n, d=1, seed=0, lo=-1, hi=1):
    return DiscreteMeasure.uniform(np.random.default_rng(seed).uniform(lo, hi, (n, d)))


def test_two_point_swap():
    mu = DiscreteMeasure.uniform(np.array([[0.0], [1.0]]))
    nu = DiscreteMeasure.uniform(np.array([[0.0], [1.0]]))
    C = np.array([[1.0, 0.0], [0.0, 1.0]])
    plan = solve_exact(mu, nu, C)
    np.testing.assert_allclose(plan.coupling, [[0, 0.5], [0.5, 0]])
    assert plan.objective == 0.0


def test_eight_point_quadratic_sum_cost():
    rng = np.random.default_rng(8)
    x, y = rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8)
    mu, nu = DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y)
    C = (x[:, None] + y[None, :]) ** 2 / 4
    plan = solve_exact(mu, nu, CostMatrix(C, "maximize"))
    best, perm = brute_force(C, maximize=True)
    assert plan.objective == pytest.approx(best, abs=1e-12)
    want = np.zeros((8, 8))
    want[np.arange(8), perm] = 1 / 8
    np.testing.assert_allclose(plan.coupling, want, atol=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_exact_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 1, (n, n))
    mu = DiscreteMeasure.uniform(np.zeros((n, 1)))
    plan = solve_exact(mu, mu, C)
    best, _ = brute_force(C)
    assert plan.objective == pytest.approx(best, abs=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_exact_plan_feasible_and_dual_certified(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.1, 1, 6)
    b = rng.uniform(0.1, 1, 9)
    b *= a.sum() / b.sum()
    C = rng.standard_normal((6, 9))
    mu = DiscreteMeasure(np.zeros((6, 1)), a)
    nu = DiscreteMeasure(np.zeros((9, 1)), b)
    plan = solve_exact(mu, nu, C)
    np.testing.assert_allclose(plan.row_sums(), a, atol=1e-12)
    np.testing.assert_allclose(plan.col_sums(), b * (a.sum() / b.sum()), atol=1e-12)
    # dual feasibility and zero gap
    assert np.all(plan.u[:, None] + plan.v[None, :] <= C + 1e-10)
    assert plan.dual_objective(a, b) == pytest.approx(plan.objective, abs=1e-10)


def test_maximize_flips_duals():
    rng = np.random.default_rng(2)
    C = rng.standard_normal((5, 5))
    mu = DiscreteMeasure.uniform(np.zeros((5, 1)))
    pmax = solve_exact(mu, mu, CostMatrix(C, "maximize"))
    pmin = solve_exact(mu, mu, CostMatrix(-C, "minimize"))
    np.testing.assert_allclose(pmax.coupling, pmin.coupling)
    assert pmax.objective == pytest.approx(-pmin.objective)
    assert np.all(pmax.u[:, None] + pmax.v[None, :] >= C - 1e-10)


def test_zero_weight_points_are_kept_empty():
    mu = DiscreteMeasure(np.array([[0.0], [1.0], [2.0]]), [0.5, 0.0, 0.5])
    nu = DiscreteMeasure(np.array([[0.0], [2.0]]), [0.5, 0.5])
    plan = solve_exact(mu, nu, np.abs(mu.points - nu.points.T))
    assert plan.row_sums()[1] == 0
    assert plan.shape == (3, 2)


def test_degenerate_ties_terminate():
    mu = DiscreteMeasure.uniform(np.zeros((10, 1)))
    plan = solve_exact(mu, mu, np.zeros((10, 10)))
    assert plan.objective == 0.0
    np.testing.assert_allclose(plan.row_sums(), 0.1)


def test_deterministic_tie_break():
    mu = DiscreteMeasure.uniform(np.zeros((6, 1)))
    C = np.ones((6, 6))
    a, b = solve_exact(mu, mu, C), solve_exact(mu, mu, C)
    assert a.triples() == b.triples()


def test_errors():
    mu = DiscreteMeasure.uniform(np.zeros((2, 1)))
    nu = DiscreteMeasure.uniform(np.zeros((2, 1)), mass=3.0)
    with pytest.raises(BalanceError):
        solve_exact(mu, nu, np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        solve_exact(mu, mu, np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        CostMatrix(np.array([[np.inf]]))
    big = DiscreteMeasure.uniform(np.zeros((2001, 1)))
    with pytest.raises(SizeError):
        solve_exact(big, big, np.zeros((2001, 2001)))


def test_monotone_1d_is_sorted_matching():
    x = np.random.default_rng(5).uniform(0, 1, 30)
    y = np.random.default_rng(6).uniform(0, 1, 30)
    mu, nu = DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y)
    plan = solve_monotone_1d(mu, nu, lambda i, j: 0.5 * (x[i] - y[j]) ** 2, "minimize")
    pm = plan_to_map(plan, mu, nu)
    np.testing.assert_array_equal(np.sort(x), x[np.argsort(x)])
    np.testing.assert_allclose(pm.images[np.argsort(x), 0], np.sort(y))
    exact = solve_exact(mu, nu, 0.5 * (x[:, None] - y[None, :]) ** 2)
    assert plan.objective == pytest.approx(exact.objective, abs=1e-14)


def test_monotone_duals_certify():
    rng = np.random.default_rng(9)
    x, y = rng.uniform(0, 1, 12), rng.uniform(0, 1, 15)
    a, b = rng.uniform(0.5, 1, 12), rng.uniform(0.5, 1, 15)
    b *= a.sum() / b.sum()
    mu, nu = DiscreteMeasure(x, a), DiscreteMeasure(y, b)
    C = (x[:, None] + y[None, :]) ** 2
    plan = solve_monotone_1d(mu, nu, lambda i, j: C[i, j], "maximize")
    assert np.all(plan.u[:, None] + plan.v[None, :] >= C - 1e-10)
    ex = solve_exact(mu, nu, CostMatrix(C, "maximize"))
    assert plan.objective == pytest.approx(ex.objective, abs=1e-12)


def test_entropic_converges_to_exact():
    rng = np.random.default_rng(8)
    x, y = rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8)
    mu, nu = DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y)
    C = CostMatrix((x[:, None] + y[None, :]) ** 2 / 4, "maximize")
    ex = solve_exact(mu, nu, C)
    en = solve_entropic(mu, nu, C, eps=1e-4 * float(np.ptp(C.values)))
    assert en.objective == pytest.approx(ex.objective, rel=1e-3)


def test_entropic_residual_trace_nonincreasing():
    mu, nu = uniform(20, 2, 1), uniform(20, 2, 2)
    C = 0.5 * np.sum((mu.points[:, None] - nu.points[None]) ** 2, axis=-1)
    plan = solve_entropic(mu, nu, C, schedule=[0.05])
    trace = np.array(plan.meta["residual_trace"])
    assert np.all(np.diff(trace) <= 1e-15 + 1e-9 * trace[:-1])


def test_plan_to_map_modes():
    mu = DiscreteMeasure.uniform(np.array([[0.0], [1.0]]))
    nu = DiscreteMeasure(np.array([[0.0], [1.0], [2.0]]), [0.5, 0.25, 0.25])
    plan = solve_exact(mu, nu, np.abs(mu.points - nu.points.T))
    pm = plan_to_map(plan, mu, nu)
    assert pm.mode == "barycentric" and pm.split_rows == (1,)
    np.testing.assert_allclose(pm.images[:, 0], [0.0, 1.5])
    with pytest.raises(MultivaluedMapError):
        plan_to_map(plan, mu, nu, "dominant")
    assert pm(np.array([0.0]))[0] == 0.0
    with pytest.raises(KeyError):
        pm(np.array([0.5]))


def test_transpose():
    mu, nu = uniform(4, 1, 1), uniform(4, 1, 2)
    plan = solve_exact(mu, nu, np.random.default_rng(0).uniform(0, 1, (4, 4)))
    np.testing.assert_array_equal(plan.transpose().coupling, plan.coupling.T)
