import math
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from loopsoup.errors import KernelMismatch
from loopsoup.kernel import build_kernel
from loopsoup.loops import LoopMeasure, sample_loop_soup, sample_soup_batch
from loopsoup.renorm import (
    L_n_on_loop,
    PointMeasure,
    build_A,
    build_B,
    psi_field,
    psi_n,
    psi_tilde_n,
    series_coeffs_A,
    series_coeffs_B,
    wick_power_by_chaos,
)

c, a, v, t = sp.symbols("c alpha v t")
N = 5


def _sympy_series(gen):
    ser = sp.series(gen, t, 0, N + 1).removeO()
    return [sp.expand(ser.coeff(t, n) * sp.factorial(n)) for n in range(N + 1)]


A_GEN = _sympy_series((1 + c * t) ** (-a) * sp.exp((v + a * c) * t / (1 + c * t)))
B_GEN = _sympy_series(sp.exp(v * t / (1 + c * t)))


@pytest.mark.parametrize("n", range(N + 1))
def test_A_matches_symbolic_generating_function(n):
    assert sp.expand(build_A(c, a, n)(v) - A_GEN[n]) == 0


@pytest.mark.parametrize("n", range(N + 1))
def test_B_matches_symbolic_generating_function(n):
    assert sp.expand(build_B(c, n)(v) - B_GEN[n]) == 0


def test_low_order_polynomials():
    assert sp.expand(build_A(c, a, 2)(v)) == sp.expand(v**2 - 2 * c * v - a * c**2)
    assert sp.expand(build_A(c, a, 3)(v)) == sp.expand(v**3 - 6 * c * v**2 + (6 - 3 * a) * c**2 * v + 4 * a * c**3)
    assert build_B(Fraction(1, 2), 2).coeffs == (0, -1, 1)


@settings(max_examples=50, deadline=None)
@given(st.fractions(min_value=Fraction(1, 10), max_value=5, max_denominator=20), st.integers(1, 8))
def test_B_closed_form_exact(cf, n):
    want = [Fraction(0)] + [
        Fraction(math.factorial(n) * math.comb(n - 1, j - 1), math.factorial(j)) * (-cf) ** (n - j)
        for j in range(1, n + 1)
    ]
    assert list(build_B(cf, n).coeffs) == want


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.1, 4.0), st.integers(1, 7))
def test_series_routes_agree(cv, av, n):
    sa = series_coeffs_A(cv, av, n)[n]
    sb = series_coeffs_B(cv, n)[n]
    for x, y in zip(build_A(cv, av, n).coeffs, sa):
        assert float(x) == pytest.approx(float(y), rel=1e-10, abs=1e-10)
    for x, y in zip(build_B(cv, n).coeffs, sb):
        assert float(x) == pytest.approx(float(y), rel=1e-10, abs=1e-10)


def test_alpha_zero_reduces_to_B():
    # alpha = 0 drops every circuit correction
    for n in range(1, 6):
        assert sp.expand(build_A(c, 0, n)(v) - build_B(c, n)(v)) == 0


def test_negative_order_rejected():
    with pytest.raises(ValueError):
        build_B(1.0, -1)
    with pytest.raises(ValueError):
        build_A(1.0, 1.0, -1)


def test_psi_n_is_sum_over_loops(measure):
    soup = sample_loop_soup(measure, 2.0, 99)
    k = measure.kernel
    for n in (1, 2, 3):
        for x in range(2):
            b = build_B(float(k.green[x, x]), n)
            literal = sum(L_n_on_loop(k, n, x, lp) for lp in soup.loops) - 2.0 * float(b.mu_value())
            assert psi_n(soup, measure, n, x) == pytest.approx(literal, rel=1e-12, abs=1e-12)
    nu = PointMeasure((0.3, -1.2))
    assert psi_n(soup, measure, 2, nu) == pytest.approx(
        0.3 * psi_n(soup, measure, 2, 0) - 1.2 * psi_n(soup, measure, 2, 1), rel=1e-12, abs=1e-12
    )


def test_psi_one_is_psi(measure, rng):
    batch = sample_soup_batch(measure, 1.0, 200, rng)
    for x in range(2):
        assert np.allclose(psi_tilde_n(batch, measure, 1, None, x), psi_field(batch, measure, x))


def test_wick_power_by_chaos_matches(kernel, rng):
    meas = LoopMeasure(kernel, 1e-10)
    batch = sample_soup_batch(meas, 1.5, 300, rng)
    for n in (1, 2, 3):
        lhs = psi_tilde_n(batch, meas, n, None, 0)
        rhs = wick_power_by_chaos(batch, meas, n, 0)
        assert np.max(np.abs(lhs - rhs) / (1 + np.abs(lhs))) < 1e-7


def test_field_errors(measure, rng):
    batch = sample_soup_batch(measure, 1.0, 3, rng)
    with pytest.raises(ValueError):
        psi_tilde_n(batch, measure, 2, 2.0, 0)
    other = LoopMeasure(build_kernel([[-1.0, 0.3], [0.3, -1.0]]), 1e-8)
    with pytest.raises(KernelMismatch):
        psi_n(batch, other, 2, 0)
    with pytest.raises(ValueError):
        PointMeasure((1.0, -1.0), positive=True)
