import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from g2ppcal.curve import (CurveDomainError, MarketCurve, discount, flat_curve, from_zero_rates,
                           nelson_siegel_curve, nelson_siegel_rate, read_curve_csv,
                           write_curve_csv, zero_rate)


@pytest.fixture
def two_pillar():
    return MarketCurve([1.0, 3.0], [0.99, 0.95])


def test_discount_at_zero_is_one(two_pillar):
    assert discount(two_pillar, 0.0) == 1.0


def test_discount_exact_at_pillars(two_pillar):
    assert discount(two_pillar, 1.0) == pytest.approx(0.99, abs=1e-15)
    assert discount(two_pillar, 3.0) == pytest.approx(0.95, abs=1e-15)


def test_log_linear_midpoint(two_pillar):
    # mpmath: exp((ln 0.99 + ln 0.95) / 2)
    assert discount(two_pillar, 2.0) == pytest.approx(0.9697937925146768, rel=1e-14)


def test_short_end_interpolates_from_unit_node(two_pillar):
    assert discount(two_pillar, 0.5) == pytest.approx(math.sqrt(0.99), rel=1e-14)


@pytest.mark.parametrize("T", [-1e-9, 3.0 + 1e-9, 10.0])
def test_out_of_domain(two_pillar, T):
    with pytest.raises(CurveDomainError):
        discount(two_pillar, T)


def test_zero_rate_examples():
    c = MarketCurve([1.0], [math.exp(-0.02)])
    assert zero_rate(c, 1.0) == pytest.approx(0.02, abs=1e-15)
    c = MarketCurve([2.0], [0.96])
    assert zero_rate(c, 2.0) == pytest.approx(0.020410997260127565, rel=1e-13)
    with pytest.raises(CurveDomainError):
        zero_rate(c, 0.0)


def test_flat_curve_zero_rate_identity():
    c = flat_curve(0.031, max_tenor=30.0)
    T = np.linspace(0.01, 30.0, 777)
    np.testing.assert_allclose(c.zero_rate(T), 0.031, rtol=0, atol=1e-12)
    np.testing.assert_allclose(c.instantaneous_forward(T), 0.031, atol=1e-12)


@pytest.mark.parametrize("bad", [
    dict(tenors=[1.0, 1.0], discount_factors=[0.99, 0.98]),
    dict(tenors=[2.0, 1.0], discount_factors=[0.99, 0.98]),
    dict(tenors=[0.0, 1.0], discount_factors=[0.99, 0.98]),
    dict(tenors=[1.0, 2.0], discount_factors=[1.01, 0.98]),
    dict(tenors=[1.0, 2.0], discount_factors=[0.0, 0.98]),
    dict(tenors=[1.0], discount_factors=[0.99, 0.98]),
])
def test_invalid_curves_rejected(bad):
    with pytest.raises(ValueError):
        MarketCurve(**bad)


def test_nelson_siegel_examples():
    assert nelson_siegel_rate(0.03, 0.0, 0.0, 1.5, 7.0) == pytest.approx(0.03, abs=1e-15)
    # T -> 0+ limit is beta0 + beta1
    assert nelson_siegel_rate(0.02, -0.01, 0.01, 2.0, 1e-9) == pytest.approx(0.01, abs=1e-10)
    assert nelson_siegel_rate(0.02, -0.01, 0.01, 2.0, 0.0) == pytest.approx(0.01, abs=1e-15)
    # independent mpmath evaluation of the formula
    assert nelson_siegel_rate(0.02, -0.01, 0.01, 2.0, 2.0) == pytest.approx(
        0.016321205588285577, rel=1e-13)
    with pytest.raises(ValueError):
        nelson_siegel_curve(0.02, -0.01, 0.01, 0.0)
    c = nelson_siegel_curve(0.03, 0.0, 0.0, 1.0, tenors=[1, 2, 5])
    np.testing.assert_allclose(c.zero_rate(c.tenors), 0.03, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.02, 0.08), min_size=1, max_size=15))
def test_zero_rate_round_trip(rates):
    rates = np.asarray(rates)
    # keep every discount factor <= 1
    rates = np.abs(rates)
    tenors = np.cumsum(np.linspace(0.5, 2.0, rates.size))
    c = from_zero_rates(tenors, rates)
    np.testing.assert_allclose(c.zero_rate(tenors), rates, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 0.1), min_size=2, max_size=12))
def test_monotone_discount(fwds):
    tenors = np.arange(1.0, len(fwds) + 1)
    dfs = np.exp(-np.cumsum(fwds))
    c = MarketCurve(tenors, dfs)
    T = np.linspace(0, tenors[-1], 500)
    assert np.all(np.diff(c.discount(T)) <= 0.0)


def test_csv_round_trip(tmp_path):
    c = nelson_siegel_curve(0.02, -0.01, 0.01, 2.0)
    path = tmp_path / "curve.csv"
    write_curve_csv(c, path)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "tenor_years,discount_factor"
    back = read_curve_csv(path)
    np.testing.assert_array_equal(back.tenors, c.tenors)
    np.testing.assert_array_equal(back.discount_factors, c.discount_factors)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "curve.csv"
    path.write_text("t,df\n1,0.99\n", encoding="utf-8")
    with pytest.raises(ValueError, match="header"):
        read_curve_csv(path)
