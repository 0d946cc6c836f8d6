import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from loopsoup.chaos import (
    CoupledSoupPair,
    I_n,
    I_power,
    SoupFunctional,
    exp_chaos,
    exp_chaos_series,
    martingale_decompose,
    phi_n,
    phi_n_literal,
    phi_power,
    wick_expand,
)
from loopsoup.errors import InfiniteMass
from loopsoup.loops import SoupBatch

M = 2


def soup_occ(max_loops):
    return st.integers(0, max_loops).flatmap(
        lambda n: arrays(np.float64, (n, M), elements=st.floats(0, 3, allow_subnormal=False))
    )


def batches(max_loops=6, max_soups=4):
    return st.lists(soup_occ(max_loops), min_size=1, max_size=max_soups).map(
        lambda occs: SoupBatch.from_occupations(occs, 1.3)
    )


def coefs(k):
    return st.lists(st.floats(-1, 1), min_size=k, max_size=k)


def _vals(batch, cs):
    # g_j(omega) = c0 L0 + c1 L1^2, varied per functional
    return [cs[2 * j] * batch.occ[:, 0] + cs[2 * j + 1] * batch.occ[:, 1] ** 2 for j in range(len(cs) // 2)]


@settings(max_examples=25, deadline=None)
@given(batches(), st.integers(0, 4).flatmap(lambda n: coefs(2 * n)))
def test_phi_matches_literal(batch, cs):
    vals = _vals(batch, cs)
    got = phi_n(batch, vals)
    for s in range(batch.n_soups):
        sel = batch.soup == s
        want = phi_n_literal([v[sel] for v in vals])
        assert got[s] == pytest.approx(want, rel=1e-9, abs=1e-9 * (1 + abs(want)))


@settings(max_examples=20, deadline=None)
@given(batches(), coefs(2), st.floats(-2, 2))
def test_power_routes(batch, cs, mu):
    v = _vals(batch, cs)[0]
    top = 4
    ph = phi_power(batch, v, top)
    ip = I_power(batch, v, top, mu=mu)
    for k in range(top + 1):
        ref = phi_n(batch, [v] * k)
        assert np.allclose(ph[:, k], ref, rtol=1e-9, atol=1e-8 * (1 + np.abs(ref).max()))
        refI = I_n(batch, [v] * k, mus=[mu] * k)
        assert np.allclose(ip[:, k], refI, rtol=1e-9, atol=1e-8 * (1 + np.abs(refI).max()))


@settings(max_examples=20, deadline=None)
@given(batches(), st.sampled_from([(1, 1), (2, 1), (2, 2), (1, 2, 1), (1, 1, 1)]), st.data())
def test_wick_expansion_identity(batch, sizes, data):
    cs = data.draw(coefs(2 * sum(sizes)))
    vals = _vals(batch, cs)
    res = wick_expand(batch, sizes, vals)
    scale = 1 + max(np.prod([1 + np.abs(v).sum() for v in vals]), 1)
    assert np.abs(res).max() <= 1e-10 * scale


@settings(max_examples=20, deadline=None)
@given(batches(max_loops=8), st.floats(-0.5, 0.5), st.floats(-1, 1))
def test_exp_series_converges(batch, scale, mu):
    v = scale * np.tanh(batch.occ[:, 0] + batch.occ[:, 1])
    full = exp_chaos(batch, v, mu=mu)
    part = exp_chaos_series(batch, v, 30, mu=mu)
    assert np.allclose(full, part, rtol=1e-8, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(batches(), st.floats(-0.9, 2), st.floats(-0.9, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_exp_product_rule(batch, a, b, mg, mh):
    g = a * np.tanh(batch.occ[:, 0])
    h = b * np.tanh(batch.occ[:, 1])
    gh = g * h
    mu_gh = 0.37
    lhs = exp_chaos(batch, g, mu=mg) * exp_chaos(batch, h, mu=mh)
    rhs = exp_chaos(batch, g + h + gh, mu=mg + mh + mu_gh) * math.exp(batch.alpha * mu_gh)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def test_exp_chaos_sign_and_zero():
    batch = SoupBatch.from_occupations([np.array([[1.0, 0.0], [2.0, 0.0]]), np.array([[3.0, 0.0]])], 1.0)
    g = np.array([-2.0, 1.0, -1.0])
    out = exp_chaos(batch, g, mu=0.0)
    assert out[0] == pytest.approx(-2.0)
    assert out[1] == 0.0


@settings(max_examples=20, deadline=None)
@given(batches(max_soups=3), batches(max_soups=3), st.integers(1, 3).flatmap(lambda n: coefs(2 * n)))
def test_martingale_split(b1, b2, cs):
    n = min(b1.n_soups, b2.n_soups)
    b1 = SoupBatch(n, b1.soup[b1.soup < n], b1.occ[b1.soup < n], 0.7, 0.0)
    b2 = SoupBatch(n, b2.soup[b2.soup < n], b2.occ[b2.soup < n], 0.4, 0.0)
    pair = CoupledSoupPair(b1, b2)
    k = len(cs) // 2
    mus = [0.1 * (j + 1) for j in range(k)]
    comb = pair.combined
    vals = _vals(comb, cs)
    gs = [SoupFunctional(lambda occ, j=j: cs[2 * j] * occ[:, 0] + cs[2 * j + 1] * occ[:, 1] ** 2, mus[j])
          for j in range(k)]
    res = martingale_decompose(pair, gs)
    scale = 1 + np.prod([1 + np.abs(v).sum() for v in vals])
    assert np.abs(res).max() <= 1e-10 * scale


def test_first_chaos_is_centered_sum():
    batch = SoupBatch.from_occupations([np.array([[1.0, 2.0], [0.5, 0.0]])], 2.0)
    g = np.array([3.0, -1.0])
    assert I_n(batch, [g], mus=[0.25])[0] == pytest.approx(2.0 - 2.0 * 0.25)
    assert I_n(batch, [], mus=[])[0] == 1.0


def test_functional_constructors(kernel):
    with pytest.raises(InfiniteMass):
        SoupFunctional.on_site(kernel, 0, lambda t: 1.0 + t)
    L = SoupFunctional.occupation(kernel, 0)
    assert L.mu == pytest.approx(8 / 7)
    assert (L * L).mu == pytest.approx(64 / 49)
    f = SoupFunctional.on_site(kernel, 0, lambda t: 1 - np.exp(-t))
    # mu(1 - e^{-L}) = log(1 + c)
    assert f.mu == pytest.approx(math.log(1 + 8 / 7), rel=1e-9)
    r2 = SoupFunctional.renormalized(kernel, 1, 2)
    assert r2.mu == pytest.approx(-(8 / 7) ** 2)
    with pytest.raises(ValueError):
        SoupFunctional(lambda occ: occ[:, 0], None).mu
