import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twostep.catalog import coulomb_constants, get_kernel, get_potential, standard_entries
from twostep.errors import (ConvexityError, DerivativeEvaluationError, SingularityError,
                            ValidationError)
from twostep.finite_diff import fd_derivatives
from twostep.legendre import DiscreteConjugate, LegendreDual, legendre_transform, smooth_dual
from twostep.potentials import (Polynomial, RadialPower, force_from_modified,
                                modified_potential, shift)

rng = np.random.default_rng(0)


def interior_points(entry, n=50, seed=0):
    r = np.random.default_rng(seed)
    Z = r.uniform(-0.5, 0.5, (n, entry.dim))
    return Z + 1.0 if entry.name.startswith("coulomb") else Z


# ------------------------------------------------------------ modified potentials


def test_modified_of_zero_is_norm_squared():
    Qt = modified_potential(Polynomial.zero(3), 2.0)
    z = rng.standard_normal((5, 3))
    np.testing.assert_allclose(Qt.value(z), np.sum(z * z, axis=1))
    np.testing.assert_allclose(Qt.hess(z), np.broadcast_to(2 * np.eye(3), (5, 3, 3)))


def test_modified_of_quadratic():
    Qt = modified_potential(Polynomial.norm_squared(2), 2.0)
    z = np.array([0.3, -1.2])
    np.testing.assert_allclose(Qt.grad(z), 4 * z)


def test_force_round_trip():
    Q = get_potential("softwell", 2).field
    back = force_from_modified(modified_potential(Q, 0.7), 0.7)
    z = rng.standard_normal((4, 2))
    np.testing.assert_allclose(back.value(z), Q.value(z), atol=1e-13)


def test_modified_rejects_bad_horizon():
    with pytest.raises(ValidationError):
        modified_potential(Polynomial.zero(1), 0.0)


def test_ex61_derivatives_at_ones():
    Qt = get_potential("ex61-Q:50").field
    z = np.ones(3)
    T3, T4 = Qt.third(z), Qt.fourth(z)
    assert T4[1, 1, 2, 2] == 4.0
    assert T3[2, 2, 0] == 2.0
    assert T3[0, 1, 1] == 2.0
    fd = Qt.finite_difference()
    assert fd.fourth(z)[1, 1, 2, 2] == pytest.approx(4.0, abs=1e-4)
    assert fd.third(z)[2, 2, 0] == pytest.approx(2.0, abs=1e-4)


@pytest.mark.parametrize("entry", standard_entries(3), ids=lambda e: e.name)
def test_analytic_matches_finite_differences(entry):
    Qt = entry.modified()
    fd = Qt.finite_difference()
    Z = interior_points(entry)
    for k in range(1, 5):
        a = np.asarray(Qt.derivative(Z, k)).reshape(len(Z), -1)
        b = np.asarray(fd.derivative(Z, k)).reshape(len(Z), -1)
        # relative to the tensor size; the Hessian size is the floor for vanishing tensors
        scale = np.maximum(np.abs(a).max(axis=1), np.abs(Qt.hess(Z)).max())
        assert np.max(np.abs(a - b).max(axis=1) / scale) <= 1e-5, k


# ------------------------------------------------------------ polynomials


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_polynomial_shift(y):
    p = get_potential("ex61-Qprime").field
    y = np.array(y)
    z = np.array([[0.1, -0.4, 0.7]])
    np.testing.assert_allclose(p.shifted(y).value(z), p.value(z - y), rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(shift(p, y).grad(z), p.grad(z - y), rtol=1e-10, atol=1e-9)


def test_polynomial_mapping_round_trip(tmp_path):
    p = get_potential("ex61-Q").field
    data = p.to_mapping()
    back, level = Polynomial.from_mapping(data)
    z = rng.standard_normal((3, 3))
    np.testing.assert_allclose(back.value(z), p.value(z))
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"coefficients": data, "level": "modified"}))
    entry = get_potential(f"poly:{path}")
    assert entry.level == "modified"
    np.testing.assert_allclose(entry.modified().value(z), p.value(z))


def test_closed_form_dual_of_quadratics():
    F = Polynomial.norm_squared(3)
    p = rng.standard_normal((4, 3))
    np.testing.assert_allclose(F.closed_form_dual().value(p), np.sum(p * p, axis=1) / 4)
    a = 3.0
    G = Polynomial.norm_squared(3, a / 2)
    np.testing.assert_allclose(G.closed_form_dual().value(p), np.sum(p * p, axis=1) / (2 * a))
    assert Polynomial.norm_fourth(2).closed_form_dual() is None


def test_linear_combination_arithmetic():
    a = get_potential("quartic", 2).field
    b = RadialPower(1.0, 3.0, 2)
    c = 2.0 * a - b
    z = np.array([[0.3, 0.4]])
    np.testing.assert_allclose(c.value(z), 2 * a.value(z) - 0.125)
    np.testing.assert_allclose(c.hess(z), 2 * a.hess(z) - b.hess(z))


# ------------------------------------------------------------ radial powers


def test_radial_power_matches_finite_differences():
    f = RadialPower(1.7, -1.0, 3)
    z = np.array([0.4, -0.8, 1.1])
    fd = f.finite_difference()
    for k in range(1, 5):
        a, b = f.derivative(z, k), fd.derivative(z, k)
        assert np.max(np.abs(a - b)) <= 1e-5 * np.max(np.abs(a))


def test_radial_power_singularity():
    with pytest.raises(SingularityError):
        RadialPower(1.0, -1.0, 3).value(np.zeros(3))


# ------------------------------------------------------------ finite differences


def test_fd_bilinear_hessian():
    f = lambda p: p[..., 0] * p[..., 1]
    # the stencil is exact for bilinear f; what remains is rounding of f, about eps |f| / h^2
    H = fd_derivatives(f, np.array([0.5, 0.25]), 2, 1e-4)
    np.testing.assert_allclose(H, [[0, 1], [1, 0]], atol=1e-9)
    H = fd_derivatives(f, np.array([0.3, 0.7]), 2, 1e-4)
    np.testing.assert_allclose(H, [[0, 1], [1, 0]], atol=1e-8)


def test_fd_quartic_fourth_derivative():
    T = fd_derivatives(lambda p: np.sum(p * p, axis=-1) ** 2, np.array([1.0, 0.0, 0.0]), 4)
    assert T[0, 0, 0, 0] == pytest.approx(24.0, rel=1e-3)


def test_fd_mixed_quartic_monomial():
    f = lambda p: p[..., 1] ** 2 * p[..., 2] ** 2
    z = np.array([0.2, 0.5, -0.3])
    # exact stencil: a larger step only reduces rounding
    T = fd_derivatives(f, z, 4, 0.03)
    assert T[1, 1, 2, 2] == pytest.approx(4.0, abs=1e-9)
    assert fd_derivatives(f, z, 4)[1, 1, 2, 2] == pytest.approx(4.0, abs=1e-4)
    assert T[1, 2, 1, 2] == T[1, 1, 2, 2]


def test_fd_extrapolation_is_more_accurate():
    f = lambda p: np.sum(p * p, axis=-1) ** 2 + 50 * np.sum(p * p, axis=-1)
    z = np.array([0.3, -0.2, 0.4])
    exact = get_potential("quartic", 3).field.fourth(z)
    plain = fd_derivatives(f, z, 4)
    rich = fd_derivatives(f, z, 4, extrapolate=True)
    assert np.max(np.abs(rich - exact)) < np.max(np.abs(plain - exact))


def test_fd_nonfinite_value_names_point():
    with pytest.raises(DerivativeEvaluationError) as exc, np.errstate(divide="ignore"):
        fd_derivatives(lambda p: 1.0 / p[..., 0], np.array([0.0]), 2)
    assert exc.value.point is not None


# ------------------------------------------------------------ catalog


def test_catalog_lookup_errors():
    with pytest.raises(ValidationError):
        get_potential("nothing", 2)
    with pytest.raises(ValidationError):
        get_potential("quadratic")
    with pytest.raises(ValidationError):
        get_potential("ex61-Q", 2)
    with pytest.raises(ValidationError):
        get_potential("coulomb:2")
    with pytest.raises(ValidationError):
        get_potential("coulomb:3:-1")
    with pytest.raises(ValidationError):
        get_kernel("linear:1,2", 2)


def test_linear_potential():
    e = get_potential("linear:1,-2")
    assert e.dim == 2
    np.testing.assert_allclose(e.field.grad(np.zeros(2)), [1, -2])


def test_coulomb_constants_and_cost():
    m, K = coulomb_constants(3)
    assert m == 0.5 and K == 2.0
    e = get_potential("coulomb:3")
    p = np.array([[0.3, 0.4, 1.2]])
    np.testing.assert_allclose(e.cost_field.value(p), 2 * np.linalg.norm(p) ** 0.5, rtol=1e-15)
    np.testing.assert_allclose(e.dual.value(p), -2 * np.linalg.norm(p) ** 0.5, rtol=1e-15)


def test_coulomb_dual_inverts_kernel_gradient():
    for d in (3, 4, 5):
        e = get_potential(f"coulomb:{d}")
        z = np.array([0.4, -0.7, 0.9, 0.2, 0.5][:d])
        p = e.field.grad(z)
        np.testing.assert_allclose(e.dual.grad(p), z, rtol=1e-12)


# ------------------------------------------------------------ Legendre


def test_legendre_closed_form():
    F = Polynomial.norm_squared(2)
    G = legendre_transform(F, -np.ones(2), np.ones(2))
    p = np.array([[0.5, -1.0]])
    np.testing.assert_allclose(G.value(p), np.sum(p * p) / 4)


def test_legendre_rejects_nonconvex():
    f = get_potential("softwell", 1).field * -1.0
    with pytest.raises(ConvexityError) as exc:
        legendre_transform(f, -1.0, 1.0)
    assert exc.value.witness is not None


def test_legendre_newton_dual_of_quartic():
    F = get_potential("quartic", 2).modified()
    G = legendre_transform(F, -np.ones(2), np.ones(2), method="newton")
    assert isinstance(G, LegendreDual)
    z = np.random.default_rng(1).uniform(-1, 1, (30, 2))
    p = F.grad(z)
    np.testing.assert_allclose(G.grad(p), z, atol=1e-10)
    np.testing.assert_allclose(G.value(p), np.sum(z * p, axis=1) - F.value(z), atol=1e-10)


@pytest.mark.parametrize("name", ["quadratic", "quartic"])
def test_discrete_conjugate_matches_smooth_dual(name):
    F = get_potential(name, 2).modified()
    D = DiscreteConjugate(F, -np.ones(2), np.ones(2), 81)
    S = smooth_dual(F)
    p = F.grad(np.random.default_rng(2).uniform(-0.7, 0.7, (40, 2)))
    h = D.spacing
    lip = float(np.max(np.abs(F.grad(np.ones((1, 2))))))
    assert np.max(np.abs(D.value(p) - S.value(p))) <= 2 * h * lip
    assert D.separable_parts() is None or name == "quadratic"


def test_discrete_conjugate_has_no_hessian():
    D = DiscreteConjugate(Polynomial.norm_squared(1), [-1.0], [1.0], 11)
    with pytest.raises(ValidationError):
        D.hess(np.array([0.1]))


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_duality_quartic(a, b):
    F = get_potential("quartic", 2).modified()
    G = smooth_dual(F)
    z = np.array([a, b])
    np.testing.assert_allclose(G.grad(F.grad(z)), z, atol=1e-9 * (1 + np.abs(z).max()))
