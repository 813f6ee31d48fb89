from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehydro import odesys
from ehydro.analysis import ConditioningWarning, analysis_report, detrend, fit_modes, growth_rate, mode_table, spectrum
from ehydro.hydro import CouplingSet

T10 = np.arange(0.0, 10.0 + 1e-12, 0.01)


# -- fit_modes ---------------------------------------------------------------


def test_fit_exact_cosine():
    fit = fit_modes(T10, 3.0 * np.cos(2.0 * T10), frequencies=[2.0])
    assert fit.coefficient("cos", 2.0) == pytest.approx(3.0, abs=1e-9)
    assert fit.residual < 1e-10


def test_fit_exact_exponential():
    fit = fit_modes(T10, np.exp(0.5 * T10), rates=[0.5])
    assert fit.coefficient("exp", 0.5) == pytest.approx(1.0, abs=1e-9)
    assert fit.coefficient("exp", -0.5) == pytest.approx(0.0, abs=1e-9)
    assert fit.residual < 1e-10


@pytest.mark.parametrize("ce", [0.25, 0.5])
def test_fit_level_a_mass(ce):
    # the energy rate is sqrt(c_e d_e)
    k = CouplingSet(a=0.5, b=0.3, c=-1.0, d=1.0, c_e=ce, d_e=ce)
    sys_a = odesys.build(k, "A")
    y0 = np.array([1.0, 0.8, 0.1, 0.2, 0.3, 0.1])
    tr = odesys.integrate_ode(sys_a, y0, 1e-3, 20_000, every=10)
    fit = fit_modes(tr.t, tr["A"], [1.0], [math.sqrt(ce * ce)])
    assert fit.residual < 1e-8
    np.testing.assert_allclose(fit.coefficients, odesys.level_a_coefficients(k, y0)["A"], atol=1e-7)


def test_fit_errors():
    with pytest.raises(ValueError, match="distinct"):
        fit_modes(T10, T10, frequencies=[1.0, 1.0])
    with pytest.raises(ValueError, match="nonzero"):
        fit_modes(T10, T10, rates=[0.0])
    with pytest.raises(ValueError, match="samples"):
        fit_modes(T10[:8], T10[:8], frequencies=[1.0, 2.0])
    with pytest.raises(ValueError, match="equal length"):
        fit_modes(T10, T10[:-1])


def test_near_coincident_modes_warn():
    with pytest.warns(ConditioningWarning, match="condition number"):
        fit_modes(T10, np.cos(T10), frequencies=[1.0, 1.0 + 1e-11])


def test_well_separated_modes_do_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit = fit_modes(T10, np.cos(T10), frequencies=[1.0, 3.0], rates=[0.2])
    assert fit.condition < 1e3


def test_evaluate_and_describe():
    y = 1.5 + 0.2 * np.sin(3 * T10)
    fit = fit_modes(T10, y, frequencies=[3.0])
    np.testing.assert_allclose(fit.evaluate(T10), y, atol=1e-12)
    assert "sin(3 t)" in fit.describe() and "relative residual" in fit.describe()
    with pytest.raises(KeyError):
        fit.coefficient("cos", 5.0)


@settings(max_examples=50)
@given(st.floats(1e-6, 1e6), st.integers(0, 2**32 - 1))
def test_residual_scale_invariant(scale, seed):
    y = np.random.default_rng(seed).normal(size=T10.size) + np.cos(T10)
    base = fit_modes(T10, y, [1.0], [0.3])
    scaled = fit_modes(T10, scale * y, [1.0], [0.3])
    assert scaled.residual == pytest.approx(base.residual, rel=1e-9)


# -- growth_rate ---------------------------------------------------------------


def test_growth_rate_examples():
    t = np.linspace(0, 20, 2001)
    assert growth_rate(np.exp(0.3 * t), t) == pytest.approx(0.3, abs=1e-6)
    t = np.linspace(0, 100, 2001)
    assert growth_rate(5 + np.exp(0.3 * t), t) == pytest.approx(0.3, abs=1e-3)


@pytest.mark.parametrize("ce", [0.25, 0.5])
def test_growth_rate_of_level_a_energy(ce):
    k = CouplingSet(c=-1.0, d=1.0, c_e=ce, d_e=ce)
    sys_a = odesys.build(k, "A")
    tr = odesys.integrate_ode(sys_a, [1, 1, 0, 0, 0.4, 0.1], 1e-3, 40_000, every=20)
    assert growth_rate(tr["EA"], tr.t) == pytest.approx(ce, rel=0.01)


def test_growth_rate_refuses_non_positive():
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValueError, match="positive"):
        growth_rate(np.cos(5 * t), t)
    with pytest.raises(ValueError):
        growth_rate([1.0, 2.0], [0.0, 1.0])


# -- spectrum ------------------------------------------------------------------


def test_spectrum_pure_cosine():
    dt = 0.01
    n = int(round(40 * math.pi / dt))
    sp = spectrum(np.cos(2 * np.arange(n) * dt), dt)
    bin_width = 1.0 / (n * dt)
    assert abs(sp.dominant - 2 / (2 * math.pi)) <= bin_width
    assert sp.trend == "constant"


@pytest.mark.parametrize("seed", range(5))
def test_white_noise_has_no_significant_peak(seed):
    y = np.random.default_rng(seed).normal(size=4096)
    sp = spectrum(y, 1.0)
    assert sp.peak_power.max() <= 3.0 * sp.median_power
    assert len(sp.significant(3.0)) == 0


def test_spectrum_needs_enough_samples():
    with pytest.raises(ValueError, match="64"):
        spectrum(np.ones(63), 0.1)
    with pytest.raises(ValueError, match="dt"):
        spectrum(np.ones(100), 0.0)


def test_spectrum_recovers_level_a_cycle():
    k = CouplingSet(a=0.5, b=0.3, c=-2.25, d=1.0, c_e=0.05, d_e=0.05)
    sys_a = odesys.build(k, "A")
    t = np.arange(0, 200, 0.05)
    a = odesys.closed_form(sys_a, [1, 1, 0.3, 0.2, 0.2, 0.1], t)[:, 0]
    sp = spectrum(a, 0.05)
    assert sp.trend == "constant+exponential"
    assert 2 * math.pi * sp.dominant == pytest.approx(1.5, rel=0.02)
    assert sp.trend_rate == pytest.approx(0.05, rel=0.05)


@settings(max_examples=25)
@given(st.floats(-50, 50), st.floats(0.1, 5.0), st.floats(0.02, 0.1), st.floats(0.8, 3.0))
def test_peak_invariant_under_trend(offset, amp, rate, w):
    dt = 0.05
    t = np.arange(0, 150, dt)
    base = np.cos(w * t)
    f0 = spectrum(base, dt).dominant
    f1 = spectrum(base + offset, dt).dominant
    f2 = spectrum(base + offset + amp * np.exp(rate * t) * 1e-3, dt).dominant
    assert f1 == pytest.approx(f0, abs=1e-6)
    bin_width = 1.0 / (len(t) * dt)
    assert abs(f2 - f0) <= 0.5 * bin_width


def test_detrend_removes_representable_trend_exactly():
    t = np.linspace(0, 30, 1500)
    resid, kind, g = detrend(t, 2.0 + 0.7 * np.exp(0.15 * t))
    assert kind == "constant+exponential"
    assert g == pytest.approx(0.15, rel=1e-6)
    assert np.abs(resid).max() < 1e-6


# -- reporting -----------------------------------------------------------------


def test_report_contains_table_and_fit():
    fit = fit_modes(T10, np.cos(T10), [1.0])
    sp = spectrum(np.cos(np.arange(1000) * 0.05), 0.05)
    text = analysis_report({"A": fit}, {"omega": 1.0, "gamma_e": 0.5}, {"omega": 1.01}, {"A": sp})
    assert "== fit of A" in text and "== spectrum of A" in text
    assert "1.000e-02" in text  # omega relative error
    assert "gamma_e" in mode_table({"gamma_e": 0.5}, {})
