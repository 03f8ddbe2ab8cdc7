import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twostep.catalog import get_kernel
from twostep.errors import (ConvexityError, InconsistencyError, SingularityError,
                            SolverStageError, ValidationError)
from twostep.measures import DiscreteMeasure, Domain
from twostep.meanfield import (Convolution, MeanFieldProblem, convolve_potential,
                               fixed_point_solve, interaction_energy, kernel_condition_screen)
from twostep.potentials import Polynomial
from twostep.schemas import TRACE
from twostep.solver import TwoStepProblem, problem3_functional


def two_diracs(a, d=1):
    pts = np.zeros((2, d))
    pts[0, 0], pts[1, 0] = -a, a
    return DiscreteMeasure(pts, [0.5, 0.5])


# ------------------------------------------------------------ convolution


def test_quartic_convolution_of_symmetric_diracs():
    Q = convolve_potential(get_kernel("quartic", 2), two_diracs(1.0, 2))
    assert isinstance(Q, Polynomial)
    assert float(Q.value(np.zeros(2))) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(Q.grad(np.zeros(2)), 0, atol=1e-15)
    # second derivative of sum_i w_i ((z1 -+ 1)^2 + z2^2)^2 at 0 along e1 is 12
    assert Q.hess(np.zeros(2))[0, 0] == pytest.approx(12.0)


@settings(max_examples=20)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6), st.floats(-2, 2), st.floats(-2, 2))
def test_polynomial_convolution_matches_direct_sum(ys, a, b):
    rho = DiscreteMeasure(np.array(ys).reshape(3, 2), [0.2, 0.3, 0.5])
    kappa = get_kernel("quartic", 2)
    z = np.array([a, b])
    direct = sum(w * float(kappa.value(z - y)) for y, w in zip(rho.points, rho.weights))
    assert float(convolve_potential(kappa, rho).value(z)) == pytest.approx(direct, rel=1e-9,
                                                                           abs=1e-9)


def test_interaction_energy_of_two_diracs():
    kappa = get_kernel("quadratic", 1)
    for r in (0.5, 1.0, 3.0):
        assert interaction_energy(two_diracs(r / 2), kappa) == pytest.approx(r * r / 4)


def test_singular_kernel_skips_self_pairs_and_refuses_collisions():
    kappa = get_kernel("coulomb:3", 3)
    rho = DiscreteMeasure(np.array([[0.0, 0, 0], [2.0, 0, 0]]), [0.5, 0.5])
    # 1/2 * 2 * (1/4) * |2|^-1
    assert interaction_energy(rho, kappa) == pytest.approx(0.125)
    # the exclusion radius is relative to the support diameter
    bad = DiscreteMeasure(np.array([[0.0, 0, 0], [0.0, 0, 1e-9], [2.0, 0, 0]]), [0.4, 0.4, 0.2])
    with pytest.raises(SingularityError):
        interaction_energy(bad, kappa)
    Q = convolve_potential(kappa, rho)
    assert isinstance(Q, Convolution)
    assert float(Q.value(np.array([1.0, 0, 0]))) == pytest.approx(1.0)
    with pytest.raises(SingularityError):
        Q.value(np.array([2.0, 0, 0]))


def test_convolution_dimension_mismatch():
    with pytest.raises(ValidationError):
        Convolution(get_kernel("coulomb:3", 3), two_diracs(1.0, 2))


# ------------------------------------------------------------ fixed point


def test_zero_kernel_converges_immediately():
    mu, nu = two_diracs(1.0), two_diracs(2.0)
    tr = fixed_point_solve(MeanFieldProblem(mu, nu, Polynomial.zero(1)))
    assert tr.converged and len(tr.records) == 1
    np.testing.assert_allclose(np.sort(tr.final.points[:, 0]), [-1.5, 1.5], atol=1e-14)


def test_two_particle_fixed_point():
    # (c-1)^2 + (2-c)^2 + c^2 is smallest at c = 1, where K = 2
    mu, nu = two_diracs(1.0), two_diracs(2.0)
    prob = MeanFieldProblem(mu, nu, get_kernel("quadratic", 1), T=1.0, tol=1e-12)
    tr = fixed_point_solve(prob)
    assert tr.converged and tr.self_consistency <= 1e-10
    np.testing.assert_allclose(np.sort(tr.final.points[:, 0]), [-1.0, 1.0], atol=1e-10)
    assert tr.records[-1].functional == pytest.approx(2.0, abs=1e-10)


def test_fixed_point_minimises_functional_under_perturbation():
    rng = np.random.default_rng(0)
    mu = DiscreteMeasure.uniform(rng.uniform(-1, 1, (6, 1)))
    nu = DiscreteMeasure.uniform(rng.uniform(1, 3, (6, 1)))
    kappa = get_kernel("quadratic", 1)
    tr = fixed_point_solve(MeanFieldProblem(mu, nu, kappa, T=1.0, tol=1e-12))
    base = TwoStepProblem(mu, nu, Polynomial.zero(1), 1.0)
    K0 = problem3_functional(tr.final, base, kernel=kappa)
    for _ in range(10):
        moved = DiscreteMeasure(tr.final.points + 0.05 * rng.standard_normal((6, 1)),
                                tr.final.weights)
        assert problem3_functional(moved, base, kernel=kappa) >= K0 - 1e-12


def test_trace_serialises_against_schema():
    tr = fixed_point_solve(MeanFieldProblem(two_diracs(1.0), two_diracs(2.0),
                                            get_kernel("quadratic", 1), tol=1e-6))
    data = tr.to_dict()
    jsonschema.validate(data, TRACE)
    assert data["iterations"] == len(tr.records)
    gaps = [r["w2_gap"] for r in data["records"]]
    assert gaps[-1] <= 1e-6


def test_nonconvex_kernel_is_refused():
    kappa = get_kernel("softwell", 1) * -1.0
    with pytest.raises(ConvexityError):
        fixed_point_solve(MeanFieldProblem(two_diracs(1.0), two_diracs(2.0), kappa))


def test_inner_failure_names_iteration(monkeypatch):
    import twostep.meanfield as mf
    calls = []
    real = mf.solve

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 3:
            raise InconsistencyError("injected", 1.0)
        return real(*args, **kwargs)

    monkeypatch.setattr(mf, "solve", flaky)
    prob = MeanFieldProblem(two_diracs(1.0), two_diracs(2.0), get_kernel("quadratic", 1),
                            tol=1e-14)
    with pytest.raises(SolverStageError) as exc:
        fixed_point_solve(prob)
    assert exc.value.iteration == 2
    assert isinstance(exc.value.__cause__, InconsistencyError)


def test_problem_validation():
    mu = two_diracs(1.0)
    with pytest.raises(ValidationError):
        MeanFieldProblem(mu, mu, Polynomial.zero(1), damping=0.0)
    with pytest.raises(ValidationError):
        MeanFieldProblem(mu, mu, Polynomial.zero(1), T=0.0)


# ------------------------------------------------------------ screening


def test_kernel_screen():
    region = Domain.ball(np.zeros(2), 0.5)
    conv, h2c = kernel_condition_screen(get_kernel("quadratic", 2), region, samples=8)
    assert conv.verdict and h2c.verdict
    conv, _ = kernel_condition_screen(get_kernel("softwell", 2) * -1.0, region, samples=8)
    assert not conv.verdict
