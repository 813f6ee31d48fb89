from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import integrate as quad

from ehydro.aggregates import (
    COLUMNS,
    IDENTITIES,
    AggregateRecord,
    AggregateSeries,
    identity_residuals,
    measure,
    measure_series,
    probability_view,
)
from ehydro.espace import Field, RiskGrid
from ehydro.hydro import SELF_CONSISTENT, HydroState, StepConfig, simulate

from helpers import FULL_COUPLINGS, bump, cfl_dt, smooth_state


def _state(g, A, v, B=None, u=None, mode=SELF_CONSISTENT):
    B = np.zeros_like(A) if B is None else B
    u = np.zeros_like(A) if u is None else u
    return HydroState.from_primary(g, A, (A * v)[None], B, (B * u)[None], mode=mode)


def test_uniform_density_at_rest():
    g = RiskGrid.uniform(1.0, 1000)
    rec = measure(_state(g, np.ones(1000), np.zeros(1000)))
    assert rec.A == pytest.approx(1.0)
    assert rec.X[0] == pytest.approx(0.5)
    assert rec.X2 == pytest.approx(1 / 3, abs=1e-6)
    assert rec.sigma2 == pytest.approx(1 / 12, abs=1e-6)
    for name in ("XPA", "EA", "PA", "XP", "XE", "VXPA", "PEA", "XPAX2", "X2EA", "XVA", "XPEA", "V4A"):
        assert np.all(np.asarray(rec[name]) == 0.0), name


def test_narrow_bump_point_limit():
    g = RiskGrid.uniform(1.0, 2000)
    A = bump(g.coords[0], 0.3, 0.003)
    rec = measure(_state(g, A, np.full(2000, 0.2)))
    assert rec.X[0] == pytest.approx(0.3, rel=1e-6)
    assert rec.EA == pytest.approx(0.04 * rec.A, rel=1e-12)
    assert rec.PA[0] == pytest.approx(0.2 * rec.A, rel=1e-12)
    assert rec.sigma2 == pytest.approx(0.003**2, rel=1e-2)


def test_every_aggregate_matches_adaptive_quadrature():
    def A(x):
        return 0.3 + np.exp(-0.5 * ((x - 0.4) / 0.15) ** 2)

    def v(x):
        return 0.3 * np.sin(np.pi * x) + 0.1 * x

    def B(x):
        return 0.5 + 0.5 * x**2

    def u(x):
        return -0.2 * np.cos(2 * x)

    expect = {
        "A": lambda x: A(x), "XPA": lambda x: x * A(x) * v(x), "EA": lambda x: A(x) * v(x) ** 2,
        "PA": lambda x: A(x) * v(x), "XP": lambda x: x * x * A(x) * v(x), "XE": lambda x: x * A(x) * v(x) ** 2,
        "VXPA": lambda x: x * A(x) * v(x) ** 2, "PEA": lambda x: A(x) * v(x) ** 3, "XA": lambda x: x * A(x),
        "X2A": lambda x: x * x * A(x), "XPAX2": lambda x: x**3 * A(x) * v(x),
        "X2EA": lambda x: x * x * A(x) * v(x) ** 2, "XVA": lambda x: (x * v(x)) ** 2 * A(x),
        "XPEA": lambda x: x * A(x) * v(x) ** 3, "V4A": lambda x: A(x) * v(x) ** 4,
        "B": lambda x: B(x), "YPB": lambda x: x * B(x) * u(x), "EB": lambda x: B(x) * u(x) ** 2,
        "PB": lambda x: B(x) * u(x), "YB": lambda x: x * B(x), "Y2B": lambda x: x * x * B(x),
        "UYPB": lambda x: x * B(x) * u(x) ** 2, "U4B": lambda x: B(x) * u(x) ** 4,
        "YUB": lambda x: (x * u(x)) ** 2 * B(x), "YPEB": lambda x: x * B(x) * u(x) ** 3,
    }  # fmt: skip
    g = RiskGrid.uniform(1.0, 4000)
    x = g.coords[0]
    rec = measure(_state(g, A(x), v(x), B(x), u(x)))
    for name, fn in expect.items():
        oracle = quad.quad(fn, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)[0]
        got = float(np.atleast_1d(rec[name])[0])
        assert got == pytest.approx(oracle, rel=1e-6, abs=1e-12), name


def test_hierarchy_closure_aggregates_read_evolved_fields():
    s = smooth_state(32)
    s.fields["EA"] = s.fields["EA"] * 3.0
    rec = measure(s)
    assert rec.EA == pytest.approx(s.grid.integrate(s.fields["EA"]))


def test_zero_mass_moments_absent():
    g = RiskGrid.uniform(1.0, 8)
    rec = measure(_state(g, np.zeros(8), np.zeros(8)))
    assert rec.A == 0.0
    assert rec.X is None and rec.X2 is None and rec.sigma2 is None


def test_probability_view():
    g = RiskGrid.uniform(1.0, 50)
    A = 1 + bump(g.coords[0], 0.3, 0.1)
    p = probability_view(A, g)
    assert g.integrate(p) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(probability_view(p, g), p, rtol=0, atol=1e-15)
    np.testing.assert_allclose(probability_view(7 * A, g), p, rtol=1e-15)
    np.testing.assert_allclose(probability_view(Field(g, A)), p)
    with pytest.raises(ValueError):
        probability_view(np.zeros(50), g)


@given(hnp.arrays(np.float64, st.integers(1, 60), elements=st.floats(0.0, 1e3)), st.integers(0, 2**32 - 1))
def test_dispersion_is_nonnegative(A, seed):
    g = RiskGrid.uniform(2.0, len(A))
    v = np.random.default_rng(seed).normal(size=len(A))
    rec = measure(_state(g, A, v))
    if rec.A > 0:
        assert rec.X2 * rec.A >= rec.XA[0] ** 2 / rec.A - 1e-12 * max(1.0, rec.X2A)
        assert rec.sigma2 >= -1e-12 * max(1.0, rec.X2)
        assert 0.0 <= rec.X[0] <= 2.0


@given(st.integers(0, 2**32 - 1))
def test_linear_aggregates_are_linear(seed):
    rng = np.random.default_rng(seed)
    g = RiskGrid.uniform(1.0, 20)
    A1, A2 = rng.random(20), rng.random(20)
    P1, P2 = rng.normal(size=(1, 20)), rng.normal(size=(1, 20))
    mk = lambda A, P: HydroState.from_primary(g, A, P, A, P, mode=SELF_CONSISTENT)  # noqa: E731
    r1, r2, r12 = measure(mk(A1, P1)), measure(mk(A2, P2)), measure(mk(A1 + A2, P1 + P2))
    for name in ("A", "B", "PA", "XPA", "XA", "X2A", "XP", "XPAX2", "YPB"):
        np.testing.assert_allclose(np.asarray(r12[name]), np.asarray(r1[name]) + np.asarray(r2[name]), rtol=1e-12, atol=1e-13)


def test_refinement_changes_aggregates_at_second_order():
    vals = []
    for n in (64, 128, 256):
        s = smooth_state(n)
        vals.append(measure(s).X2A)
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d1 / d2 == pytest.approx(4.0, rel=0.1)


def test_series_csv_roundtrip(tmp_path):
    s0 = smooth_state(32)
    series = measure_series(simulate(s0, FULL_COUPLINGS, StepConfig(0.01), 10, every=2))
    text = series.to_csv(tmp_path / "agg.csv")
    assert text.splitlines()[0] == ",".join(COLUMNS)
    back = AggregateSeries.from_csv(tmp_path / "agg.csv")
    assert len(back) == len(series) == 6
    for name in ("A", "XPA", "EA", "sigma2"):
        np.testing.assert_array_equal(back.column(name), series.column(name))
    assert back.sample_interval() == pytest.approx(0.02)


def test_series_header_two_dimensional():
    head = AggregateSeries.header(2)
    assert head[:8] == ["t", "A", "B", "XPA", "YPB", "EA", "EB", "PA_1"]
    assert "X_2" in head and "sigma2" in head and "X2A" in head


def test_absent_values_are_empty_cells(tmp_path):
    series = AggregateSeries([AggregateRecord(t=0.0, A=1.0), AggregateRecord(t=1.0, A=2.0)])
    line = series.to_csv().splitlines()[1]
    assert line.startswith("0.0,1.0,,")
    series.to_csv(tmp_path / "a.csv")
    back = AggregateSeries.from_csv(tmp_path / "a.csv")
    assert back[0].B is None and back[1].A == 2.0


def test_series_rejects_bad_order_and_spacing():
    series = AggregateSeries([AggregateRecord(t=0.0), AggregateRecord(t=1.0), AggregateRecord(t=3.0)])
    with pytest.raises(ValueError):
        series.append(AggregateRecord(t=3.0))
    with pytest.raises(ValueError, match="uniform"):
        series.sample_interval()


def test_csv_schema_mismatch(tmp_path):
    (tmp_path / "bad.csv").write_text("t,A\n0,1\n")
    with pytest.raises(ValueError, match="schema"):
        AggregateSeries.from_csv(tmp_path / "bad.csv")


def test_identity_residuals_small_and_complete():
    s0 = smooth_state(128)
    dt, n = cfl_dt(128, 0.4, 0.2)
    res = identity_residuals(list(simulate(s0, FULL_COUPLINGS, StepConfig(dt), n)), FULL_COUPLINGS)
    assert set(res) == set(IDENTITIES)
    bound = 1.0 / 128 + dt
    assert all(r.residual <= bound for r in res.values())


def test_identity_residuals_vanish_for_static_state():
    g = RiskGrid.uniform(1.0, 16)
    s0 = _state(g, 1 + bump(g.coords[0], 0.5, 0.1), np.zeros(16), mode="hierarchy")
    res = identity_residuals(list(simulate(s0, FULL_COUPLINGS.scaled(a=0.0, b=0.0), StepConfig(0.1), 3)), FULL_COUPLINGS)
    assert all(r.max_abs == 0.0 for r in res.values())
