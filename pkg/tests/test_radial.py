import math

import numpy as np
import pytest
import scipy.integrate

from loopsoup.errors import UnsupportedDimension
from loopsoup.radial import (
    H_integral,
    RadialGrid,
    TabulatedRadial,
    ball_growth_check,
    d_convolve,
    power_law,
    riesz_constant,
    rv_index,
    shifted_power,
    theta_k,
    two_term_check,
)

XS = [0.05, 1.0, 30.0, 2000.0]


@pytest.mark.parametrize("d,a,b", [(1, 0.9, 0.5), (1, 0.7, 0.7), (2, 1.6, 1.2), (2, 1.1, 1.5)])
def test_power_convolution_matches_riesz(d, a, b):
    conv = d_convolve(power_law(a, d), power_law(b, d), d, XS)
    want = riesz_constant(a, b, d) * np.asarray(XS) ** (d - a - b)
    assert np.allclose(conv.values, want, rtol=1e-6)


@pytest.mark.parametrize("d", [1, 2])
def test_convolution_symmetric(d):
    h, g = shifted_power(d * 0.7, d), power_law(d * 0.6, d)
    a = d_convolve(h, g, d, XS).values
    b = d_convolve(g, h, d, XS).values
    assert np.allclose(a, b, rtol=1e-6)


def test_riesz_constant_symmetry_and_numeric():
    assert riesz_constant(0.6, 0.8, 1) == pytest.approx(riesz_constant(0.8, 0.6, 1))
    f = lambda s: abs(1 - s) ** -0.6 * abs(s) ** -0.8
    num = sum(scipy.integrate.quad(f, lo, hi, limit=200)[0] for lo, hi in [(-np.inf, 0), (0, 1), (1, np.inf)])
    assert riesz_constant(0.6, 0.8, 1) == pytest.approx(num, rel=1e-6)


@pytest.mark.parametrize("d,alpha", [(1, 0.9), (1, 0.3), (2, 1.6)])
def test_H_integral_power(d, alpha):
    c = 2.0 if d == 1 else 2 * math.pi
    for r in (0.1, 7.0, 500.0):
        assert H_integral(power_law(alpha, d), d, r) == pytest.approx(c * r ** (d - alpha) / (d - alpha), rel=1e-8)


def test_ball_growth_power_constant():
    table = ball_growth_check(power_law(0.9, 1), 1, [1.0, 10.0, 100.0])
    assert np.allclose(table.ratio, 20.0, rtol=1e-8)
    assert table.passed and table.spread == pytest.approx(1.0)


def test_theta_two_is_riesz_power():
    th = theta_k(power_law(0.9, 1), 1, 2, XS)
    assert np.allclose(th.values, riesz_constant(0.9, 0.9, 1) * np.asarray(XS) ** -0.8, rtol=1e-6)
    assert rv_index(th, (1.0, 2000.0)).slope == pytest.approx(-0.8, abs=1e-6)


def test_two_term_shifted():
    table = two_term_check(shifted_power(0.8, 1), shifted_power(0.6, 1), 1, [10.0, 100.0, 1000.0])
    assert table.passed


def _ls_slope_of_log(lo, hi):
    # least-squares slope of log(x) on x = log r, x uniform on [log lo, log hi]
    a, b = math.log(lo), math.log(hi)
    mean = lambda f: scipy.integrate.quad(f, a, b)[0] / (b - a)
    mx, my = mean(lambda x: x), mean(math.log)
    cov = mean(lambda x: (x - mx) * (math.log(x) - my))
    return cov / mean(lambda x: (x - mx) ** 2)


def test_rv_index_examples():
    r = np.geomspace(1.0, 1e6, 6 * 64 + 1)
    assert rv_index((r, r**-0.8), (1e2, 1e4)).slope == pytest.approx(-0.8, abs=1e-12)
    assert rv_index((r, 3 * r**1.3), (1e2, 1e4)).slope == pytest.approx(1.3, abs=1e-12)
    fit = rv_index((r, r**-0.8 * np.log(r)), (1e2, 1e4))
    want = -0.8 + _ls_slope_of_log(1e2, 1e4)
    assert fit.slope == pytest.approx(want, abs=2e-3)
    assert -0.7 < fit.slope < -0.6
    with pytest.raises(ValueError):
        rv_index((r, r), (1e-1, 10.0))


def test_tabulated_extrapolation():
    r = np.geomspace(1, 100, 129)
    tab = TabulatedRadial(r, r**-1.5)
    assert tab(1000.0) == pytest.approx(1000.0**-1.5, rel=1e-9)
    assert tab(0.01) == pytest.approx(0.01**-1.5, rel=1e-9)
    assert tab(7.3) == pytest.approx(7.3**-1.5, rel=1e-8)
    with pytest.raises(ValueError):
        TabulatedRadial(r, -r)


def test_validation():
    with pytest.raises(UnsupportedDimension):
        power_law(1.0, 3)
    with pytest.raises(UnsupportedDimension):
        riesz_constant(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        RadialGrid(1.0, 0.5)
    with pytest.raises(ValueError):
        RadialGrid(0.1, 10.0, 32)
    with pytest.raises(ValueError):
        theta_k(power_law(0.4, 1), 1, 2, XS)
    assert len(RadialGrid(0.01, 1e5).points) == 7 * 64 + 1
