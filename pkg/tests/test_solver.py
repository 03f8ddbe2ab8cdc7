import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from scipy.stats import norm

from twostep import (DiscreteMeasure, Polynomial, TwoStepProblem, get_potential, inner_minimizer,
                     ma_residual, problem3_functional, reduced_cost, solve, solve_exact)
from twostep.errors import ConditionFailure, ValidationError
from twostep.measures import lattice, w2_distance, wasserstein2
from twostep.solver import action_cost, local_hessians, minkowski_box


def translation(n=64, s=0.3):
    mu = lattice(n, 1)
    return mu, DiscreteMeasure(mu.points + s, mu.weights)


def random_pair(n, d, seed, shift=0.0, half_width=1.0):
    rng = np.random.default_rng(seed)
    a = half_width
    return (DiscreteMeasure.uniform(rng.uniform(-a, a, (n, d))),
            DiscreteMeasure.uniform(rng.uniform(-a, a, (n, d)) + shift))


# ------------------------------------------------------------ inner problem


def test_inner_minimizer_quadratic():
    mu, nu = random_pair(4, 2, 0)
    problem = TwoStepProblem(mu, nu, Polynomial.norm_squared(2), 2.0)
    x, y = mu.points, nu.points
    np.testing.assert_allclose(inner_minimizer(x, y, problem), (x + y) / 4, atol=1e-15)


@settings(max_examples=20)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(0.3, 3.0))
def test_inner_minimizer_matches_direct_minimisation(xy, T):
    x, y = np.array(xy[:2]), np.array(xy[2:])
    Q = get_potential("quartic", 2).field
    mu = DiscreteMeasure.uniform(x[None])
    problem = TwoStepProblem(mu, mu, Q, T)
    z = inner_minimizer(x, y, problem)

    def bracket(z):
        return (np.sum((z - x) ** 2) + np.sum((y - z) ** 2)) / T + float(Q.value(z))

    def grad(z):
        return (2 * (z - x) - 2 * (y - z)) / T + Q.grad(z)

    ref = minimize(bracket, (x + y) / 2, jac=grad, method="Newton-CG",
                   hess=lambda z: 4 / T * np.eye(2) + Q.hess(z), options={"xtol": 1e-14})
    np.testing.assert_allclose(z, ref.x, atol=1e-8)


# ------------------------------------------------------------ closed-form solves


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_translation_closed_form(T):
    s = 0.3
    mu, nu = translation(64, s)
    sol = solve(TwoStepProblem(mu, nu, Polynomial.zero(1), T))
    np.testing.assert_allclose(sol.map_points, mu.points + s, atol=1e-12)
    np.testing.assert_allclose(sol.kick, mu.points + s / 2, atol=1e-12)
    np.testing.assert_allclose(sol.grad_phi, s / T, atol=1e-12)
    np.testing.assert_allclose(sol.velocity(), s / T, atol=1e-12)
    assert sol.phi[0] == 0.0
    assert sol.diagnostics["pushforward"]["w2"] <= 1e-10


def test_translation_monge_ampere_closed_form():
    mu, nu = translation(256, 0.3)
    sol = solve(TwoStepProblem(mu, nu, Polynomial.zero(1), 2.0))
    H = local_hessians(mu.points, sol.kick)
    np.testing.assert_allclose(H[:, 0, 0], 1.0, atol=1e-10)
    one = lambda p: np.ones(len(p))
    r = ma_residual(sol, 16, source_density=one, target_density=one)
    assert r.cells_evaluated > 0 and r.max_abs <= 1e-10
    for _, lhs, rhs, _, _ in r.cells:
        assert lhs == pytest.approx(0.5) and rhs == pytest.approx(0.5)


def test_gaussian_monge_ampere_residual():
    n = 10_000
    q = (np.arange(n) + 0.5) / n
    mu = DiscreteMeasure.uniform(norm.ppf(q))
    nu = DiscreteMeasure.uniform(norm.ppf(q, 1.0, 2.0))
    sol = solve(TwoStepProblem(mu, nu, Polynomial.zero(1), 1.0), ma_cells=32)
    r = sol.diagnostics["ma_residual"]
    assert r["cells_evaluated"] >= 20 and r["max_abs"] <= 0.1
    exact = ma_residual(sol, 32, source_density=lambda p: norm.pdf(p[:, 0]),
                        target_density=lambda p: norm.pdf(p[:, 0], 1.0, 2.0))
    assert exact.max_abs <= 0.1


def test_zero_potential_kicks_at_midpoints():
    mu, nu = random_pair(8, 2, 3)
    sol = solve(TwoStepProblem(mu, nu, Polynomial.zero(2), 2.0))
    plan = solve_exact(mu, nu, 0.5 * np.sum((mu.points[:, None] - nu.points[None]) ** 2, -1))
    want = np.zeros_like(mu.points)
    want[plan.rows] = (mu.points[plan.rows] + nu.points[plan.cols]) / 2
    np.testing.assert_allclose(sol.kick, want, atol=1e-12)


def test_single_particle_linear_force():
    x0, xT, g, T = np.array([0.2, -1.0]), np.array([1.4, 0.6]), np.array([0.5, -2.0]), 1.5
    mu = DiscreteMeasure.uniform(x0[None])
    nu = DiscreteMeasure.uniform(xT[None])
    sol = solve(TwoStepProblem(mu, nu, Polynomial.linear(g), T))
    np.testing.assert_allclose(sol.kick[0], (x0 + xT) / 2 - g * T / 4, atol=1e-12)
    np.testing.assert_allclose(sol.map_points[0], xT, atol=1e-12)


def test_maximise_and_minimise_give_same_plan():
    mu, nu = random_pair(16, 2, 16, 0.3)
    problem = TwoStepProblem.from_entry(mu, nu, get_potential("quartic", 2), 1.0)
    pmax = solve_exact(mu, nu, reduced_cost(problem))
    pmin = solve_exact(mu, nu, reduced_cost(problem, full=True))
    np.testing.assert_allclose(pmax.coupling, pmin.coupling, atol=1e-14)


def test_second_leg_reaches_target():
    mu, nu = random_pair(12, 2, 5, 0.5)
    sol = solve(TwoStepProblem.from_entry(mu, nu, get_potential("quartic", 2), 0.8))
    np.testing.assert_allclose(sol.second_leg(), sol.matched, atol=1e-8)
    np.testing.assert_allclose(sol.map_points, sol.matched, atol=1e-8)
    # the optimal map pushes the source onto the target
    assert sol.diagnostics["pushforward"]["w2"] <= 1e-8


def test_c1_bound_holds():
    # softwell stays convex after modification for |z| < 1 at T = 0.5
    mu, nu = random_pair(20, 2, 7, 0.1, 0.4)
    sol = solve(TwoStepProblem.from_entry(mu, nu, get_potential("softwell", 2), 0.5))
    c1 = sol.diagnostics["c1_bound"]
    assert c1["satisfied"] and c1["max_grad_phi_tilde"] <= c1["bound"]
    lo, hi, _ = minkowski_box(sol.problem)
    assert np.all(sol.kick >= lo) and np.all(sol.kick <= hi)


def test_functional_equals_action_at_intermediate():
    mu, nu = random_pair(10, 2, 11, 0.4)
    problem = TwoStepProblem.from_entry(mu, nu, get_potential("quartic", 2), 1.3)
    sol = solve(problem)
    assert sol.diagnostics["K_intermediate"] == pytest.approx(sol.diagnostics["action"],
                                                              rel=1e-10)
    # the action is the smallest total cost of broken paths
    C = action_cost(problem, mu.points[:, None], nu.points[None])
    assert sol.diagnostics["action"] == pytest.approx(
        solve_exact(mu, nu, C).objective, rel=1e-12)


def test_functional_with_two_diracs():
    mu = DiscreteMeasure(np.array([[-1.0], [1.0]]), [0.5, 0.5])
    nu = DiscreteMeasure(np.array([[-2.0], [2.0]]), [0.5, 0.5])
    problem = TwoStepProblem(mu, nu, Polynomial.zero(1), 1.0)
    rho = DiscreteMeasure(np.array([[-1.5], [1.5]]), [0.5, 0.5])
    # (2/T)(1/2)(0.25) twice, no potential energy
    assert problem3_functional(rho, problem) == pytest.approx(0.5)
    kappa = get_potential("quadratic", 1).field
    assert problem3_functional(rho, problem, kernel=kappa) == pytest.approx(0.5 + 9 / 4)


def test_split_rows_are_flagged():
    mu = DiscreteMeasure(np.array([[0.0]]), [1.0])
    nu = DiscreteMeasure(np.array([[-1.0], [1.0]]), [0.5, 0.5])
    sol = solve(TwoStepProblem(mu, nu, Polynomial.zero(1), 1.0))
    assert sol.split_rows == (0,)
    np.testing.assert_allclose(sol.map_points, [[0.0]], atol=1e-15)
    np.testing.assert_allclose(sol.kick, [[0.0]], atol=1e-15)


def test_entropic_solver_close_to_exact():
    mu, nu = random_pair(10, 1, 2, 0.5)
    problem = TwoStepProblem.from_entry(mu, nu, get_potential("quartic", 1), 1.0)
    ex = solve(problem, diagnostics=False)
    en = solve(problem, solver="entropic", eps=1e-4, diagnostics=False)
    assert en.plan.objective == pytest.approx(ex.plan.objective, rel=1e-3)


def test_nonconvex_modified_potential_is_refused():
    mu, nu = random_pair(5, 2, 1, 2.0)
    with pytest.raises(ConditionFailure):
        solve(TwoStepProblem.from_entry(mu, nu, get_potential("softwell", 2), 4.0))


def test_problem_validation():
    mu, nu = random_pair(3, 2, 1)
    with pytest.raises(ValidationError):
        TwoStepProblem(mu, nu, Polynomial.zero(2), -1.0)
    with pytest.raises(ValidationError):
        TwoStepProblem(mu, nu, Polynomial.zero(3))
    with pytest.raises(ValidationError):
        TwoStepProblem(mu, DiscreteMeasure.uniform(np.zeros((2, 1))), Polynomial.zero(2))
    with pytest.raises(ValidationError):
        solve(TwoStepProblem(mu, nu, Polynomial.zero(2)), solver="magic")


def test_unbalanced_target_is_renormalised():
    mu, nu = random_pair(6, 1, 4)
    nu = nu.scaled(1.5)
    with pytest.warns(RuntimeWarning):
        sol = solve(TwoStepProblem(mu, nu, Polynomial.zero(1)))
    assert sol.plan.row_sums().sum() == pytest.approx(1.0)


def test_coulomb_cost_solve():
    rng = np.random.default_rng(3)
    mu = DiscreteMeasure.uniform(rng.uniform(0.5, 1.5, (6, 3)))
    nu = DiscreteMeasure.uniform(rng.uniform(0.5, 1.5, (6, 3)))
    problem = TwoStepProblem.from_entry(mu, nu, get_potential("coulomb:3"))
    C = reduced_cost(problem).values
    S = np.linalg.norm(mu.points[:, None] + nu.points[None], axis=-1)
    np.testing.assert_allclose(C, 2 * np.sqrt(S), rtol=1e-14)


def test_local_hessians_of_quadratic_potential():
    X = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    H = local_hessians(X, X @ A)
    np.testing.assert_allclose(H, np.broadcast_to(A, H.shape), atol=1e-10)


def test_w2_of_intermediate_halfway_in_translation():
    mu, nu = translation(32, 0.8)
    sol = solve(TwoStepProblem(mu, nu, Polynomial.zero(1), 1.0))
    assert w2_distance(mu, sol.intermediate) == pytest.approx(0.5 * w2_distance(mu, nu), rel=1e-12)
    assert wasserstein2(sol.intermediate, nu) == pytest.approx(0.5 * 0.4 ** 2, rel=1e-12)
    assert math.isfinite(sol.diagnostics["objective"])
