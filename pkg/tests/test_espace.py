from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import integrate as quad
from scipy.special import erf

from ehydro import espace
from ehydro.espace import Field, RiskDomain, RiskGrid


def test_domain_rejects_bad_bounds():
    with pytest.raises(ValueError):
        RiskDomain((1.0, 0.0))
    with pytest.raises(ValueError):
        RiskDomain((np.inf,))


def test_domain_contains_is_strict():
    dom = RiskDomain((1.0, 2.0))
    pts = np.array([[0.5, 1.0], [0.0, 1.0], [1.0, 1.0], [0.5, 2.0], [0.9, 1.9]])
    assert dom.contains(pts).tolist() == [True, False, False, False, True]


def test_grid_geometry():
    g = RiskGrid.uniform((1.0, 3.0), (4, 6))
    assert g.shape == (4, 6) and g.size == 24
    assert g.spacing == (0.25, 0.5)
    assert g.cell_volume == pytest.approx(0.125)
    assert g.coords.shape == (2, 4, 6)
    assert np.all(g.domain.contains(g.coords.reshape(2, -1).T))
    assert g.refined(2).cells == (8, 12)


def test_grid_needs_one_count_per_axis():
    with pytest.raises(ValueError):
        RiskGrid(RiskDomain((1.0, 1.0)), (4,))


def test_integrate_constant_and_linear():
    g = RiskGrid.uniform(1.0, 10)
    assert g.integrate(np.ones(10)) == pytest.approx(1.0, abs=1e-15)
    for n in (1, 7, 64):
        gn = RiskGrid.uniform(1.0, n)
        assert gn.integrate(gn.coords[0]) == pytest.approx(0.5, abs=1e-14)


def _gauss_mass(c, w):
    # analytic mass of exp(-(x-c)^2 / 2w^2) on [0, 1]
    s = w * np.sqrt(2.0)
    return w * np.sqrt(np.pi / 2.0) * (erf((1 - c) / s) - erf(-c / s))


def test_integrate_converges_at_second_order():
    exact = _gauss_mass(0.37, 0.11)
    errs = []
    for n in (32, 64, 128, 256):
        g = RiskGrid.uniform(1.0, n)
        errs.append(abs(g.integrate(np.exp(-0.5 * ((g.coords[0] - 0.37) / 0.11) ** 2)) - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_moments_of_uniform_density():
    g = RiskGrid.uniform(1.0, 200)
    f = np.ones(200)
    assert g.first_moment(f)[0] == pytest.approx(0.5, abs=1e-14)
    # midpoint rule on x^2 undershoots by h^2/12
    assert g.second_moment(f) == pytest.approx(1 / 3 - (1 / 200) ** 2 / 12, abs=1e-14)


def test_first_moment_of_symmetric_bump():
    g = RiskGrid.uniform(1.0, 100)
    x = g.coords[0]
    f = np.exp(-0.5 * ((x - 0.5) / 0.05) ** 2)
    assert g.first_moment(f)[0] == pytest.approx(0.5 * g.integrate(f), rel=1e-13)


def test_second_moment_point_limit():
    g = RiskGrid.uniform(1.0, 4000)
    x = g.coords[0]
    f = np.exp(-0.5 * ((x - 0.3) / 0.002) ** 2)
    assert g.second_moment(f) == pytest.approx(0.09 * g.integrate(f), rel=1e-3)


def test_moments_match_adaptive_quadrature():
    def dens(x):
        return (1 + 3 * x**2) * np.exp(-2 * x) + 0.5 * np.exp(-0.5 * ((x - 0.7) / 0.1) ** 2)

    g = RiskGrid.uniform(1.0, 2000)
    f = dens(g.coords[0])
    m1 = quad.quad(lambda x: x * dens(x), 0, 1, epsabs=1e-14)[0]
    m2 = quad.quad(lambda x: x * x * dens(x), 0, 1, epsabs=1e-14)[0]
    assert g.first_moment(f)[0] == pytest.approx(m1, rel=1e-6)
    assert g.second_moment(f) == pytest.approx(m2, rel=1e-6)


def test_moments_in_two_dimensions():
    g = RiskGrid.uniform((1.0, 2.0), (40, 80))
    f = np.ones(g.shape)
    np.testing.assert_allclose(g.first_moment(f), [1.0, 2.0], rtol=1e-13)  # mass 2 times centre (0.5, 1)
    exact = (1 / 3) * 2 + 1 * (8 / 3)  # ∫∫ x1^2 + x2^2 over [0,1]x[0,2]
    assert g.second_moment(f) == pytest.approx(exact, rel=1e-3)


def test_divergence_constant_field():
    g = RiskGrid.uniform(1.0, 10)
    div = g.divergence(np.full((1, 10), 2.5))
    assert np.all(div[1:-1] == 0.0)
    assert g.integrate(div) == 0.0


def test_divergence_of_linear_field_interior():
    g = RiskGrid.uniform(1.0, 50)
    div = g.divergence(g.coords.copy())
    np.testing.assert_allclose(div[1:-1], 1.0, rtol=1e-12)


def test_divergence_two_dimensional_linear():
    g = RiskGrid.uniform((1.0, 1.0), (20, 30))
    F = np.stack([g.coords[0], 2 * g.coords[1]])
    div = g.divergence(F)
    np.testing.assert_allclose(div[1:-1, 1:-1], 3.0, rtol=1e-12)


def test_upwind_fluxes_take_upwind_value():
    g = RiskGrid.uniform(1.0, 4)
    f = np.array([1.0, 2.0, 3.0, 4.0])
    (flux,) = g.upwind_fluxes(f, np.array([[1.0, 1.0, -1.0, -1.0]]))
    # face velocities: 1, 0, -1 -> fluxes 1*1, 0, -1*4
    np.testing.assert_array_equal(flux, [1.0, 0.0, -4.0])


fields_1d = hnp.arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3))


@given(fields_1d)
def test_gauss_theorem_1d(values):
    g = RiskGrid.uniform(1.0, len(values))
    total = g.integrate(g.divergence(values[None]))
    assert abs(total) <= 1e-12 * max(np.abs(values).max(), 1e-300)


@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_gauss_theorem_2d(n1, n2, seed):
    rng = np.random.default_rng(seed)
    g = RiskGrid.uniform((1.0, 2.5), (n1, n2))
    F = rng.normal(size=(2, n1, n2)) * 10 ** rng.uniform(-3, 3)
    vel = rng.normal(size=(2, n1, n2))
    assert abs(g.integrate(g.divergence(F))) <= 1e-12 * np.abs(F).max()
    div = g.flux_divergence(g.upwind_fluxes(F[0], vel))
    assert abs(g.integrate(div)) <= 1e-12 * np.abs(F[0] * vel).max() * 10


@given(fields_1d, st.floats(-10, 10), st.floats(-10, 10))
def test_integrate_is_linear(f, alpha, beta):
    g = RiskGrid.uniform(2.0, len(f))
    h = np.cos(np.arange(len(f)))
    lhs = g.integrate(alpha * f + beta * h)
    rhs = alpha * g.integrate(f) + beta * g.integrate(h)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(alpha) + abs(beta)) * (1 + np.abs(f).max()))


@given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1e6)))
def test_first_moment_inside_box(f):
    g = RiskGrid.uniform(3.0, len(f))
    m = g.integrate(f)
    if m > 0:
        assert 0.0 <= g.first_moment(f)[0] / m <= 3.0


def test_field_validation():
    g = RiskGrid.uniform((1.0, 1.0), (3, 4))
    assert Field(g, np.zeros((3, 4))).rank == 0
    assert Field(g, np.zeros((2, 3, 4))).is_vector
    with pytest.raises(ValueError):
        Field(g, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        Field(g, -np.ones((3, 4)), "A", density=True)


def test_module_level_wrappers():
    g = RiskGrid.uniform(1.0, 8)
    f = Field(g, np.ones(8), "A")
    assert espace.integrate(f) == pytest.approx(1.0)
    assert espace.first_moment(f)[0] == pytest.approx(0.5)
    assert espace.second_moment(2 * f) == pytest.approx(2 * g.second_moment(np.ones(8)))
    d = espace.divergence(Field(g, g.coords.copy(), "x"))
    assert d.name == "div(x)"
    with pytest.raises(ValueError):
        espace.divergence(f)
