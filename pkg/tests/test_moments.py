import math

import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from loopsoup import moments
from loopsoup.chaos import SoupFunctional
from loopsoup.errors import EnumerationBudget

P = 8 / 49  # u(0,1) u(1,0) on the fixture


def test_mu_joint_examples(kernel):
    assert moments.mu_joint_L(kernel, [(1, 0), (1, 1)]) == pytest.approx(P, rel=1e-14)
    assert moments.mu_joint_L(kernel, [(2, 0), (2, 1)]) == pytest.approx(2 * P**2, rel=1e-14)
    assert moments.mu_joint_L(kernel, [(2, 0), (1, 1)]) == 0.0
    assert moments.expand_mu_B_product(kernel, [(2, 0), (2, 1)]) == pytest.approx(2 * P**2, rel=1e-12)
    with pytest.raises(ValueError):
        moments.mu_joint_L(kernel, [(2, 0)])
    with pytest.raises(EnumerationBudget):
        moments.mu_joint_L(kernel, [(7, 0), (6, 1)])


layouts4 = st.integers(2, 4).flatmap(
    lambda k: st.tuples(
        st.lists(st.integers(1, 3), min_size=k, max_size=k).filter(lambda s: sum(s) <= 6),
        st.permutations(range(4)).map(lambda p: list(p[:k])),
    )
)


@settings(max_examples=25, deadline=None)
@given(layouts4)
def test_mu_joint_two_routes(kernel4, layout):
    sizes, sites = layout
    blocks = list(zip(sizes, sites))
    a = moments.mu_joint_L(kernel4, blocks)
    b, scale = moments.expand_mu_B_product(kernel4, blocks, with_scale=True)
    assert abs(a - b) <= 1e-10 * max(abs(b), scale)


@settings(max_examples=25, deadline=None)
@given(layouts4, st.floats(0.1, 3.0))
def test_partition_identity(kernel4, layout, alpha):
    sizes, sites = layout
    blocks = list(zip(sizes, sites))
    lhs = moments.soup_joint_psi(kernel4, alpha, blocks)
    rhs = moments.partition_moment(kernel4, alpha, blocks)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-13)


def test_symbolic_alpha(kernel):
    a = sp.Symbol("alpha")
    e = sp.expand(moments.soup_joint_psitilde(kernel, a, [(1, 0), (1, 1)]))
    assert float(sp.Poly(e, a).coeff_monomial(a)) == pytest.approx(P, rel=1e-14)
    assert sp.Poly(e, a).degree() == 1
    e2 = sp.Poly(sp.expand(moments.soup_joint_psitilde(kernel, a, [(2, 0), (2, 1)])), a)
    assert e2.degree() == 2


@pytest.mark.parametrize("n", [1, 2, 3])
def test_psitilde_pair_constant(kernel4, n):
    for alpha in (0.5, 2.5):
        for x, y in [(0, 1), (2, 3)]:
            got = moments.soup_joint_psitilde(kernel4, alpha, [(n, x), (n, y)])
            assert got == pytest.approx(moments.wick_pair_value(kernel4, alpha, n, x, y), rel=1e-11)
    assert moments.wick_moment_constant(2, 3) == 6 * 2 * 3 * 4


def test_single_block_soup_moment_is_zero(kernel):
    assert moments.soup_joint_psi(kernel, 1.0, [(3, 0)]) == 0.0


def test_wick_covariance_orthogonal_orders(kernel):
    g = SoupFunctional.occupation(kernel, 0)
    assert moments.wick_covariance(1.0, [g], [g, g]) == 0.0
    assert moments.wick_covariance(2.0, [g], [g]) == pytest.approx(2 * 64 / 49)
    assert moments.wick_covariance(1.0, [g, g], [g, g]) == pytest.approx(2 * (64 / 49) ** 2)


def test_I_ll_covariance_example(kernel):
    assert moments.I_ll_covariance(kernel, 1.0, (2,), (2,), 0, 1) == pytest.approx(2 * P**2, rel=1e-12)
    assert moments.I_ll_covariance(kernel, 1.0, (1, 1), (2,), 0, 1) == 0.0


def test_poisson_joint_phi_first_moment(kernel):
    g = SoupFunctional.occupation(kernel, 1)
    assert moments.poisson_joint_phi(1.5, [1], [g]) == pytest.approx(1.5 * 8 / 7)
    assert moments.poisson_joint_phi(1.5, [2], [g, g]) == pytest.approx((1.5 * 8 / 7) ** 2)
    assert moments.poisson_joint_phi(1.5, [1, 1], [g, g]) == pytest.approx((1.5 * 8 / 7) ** 2 + 1.5 * 64 / 49)


def test_multi_exp_and_theta(kernel):
    h = SoupFunctional.on_site(kernel, 0, lambda t: 0.5 * (1 - math.exp(-t)))
    assert moments.multi_exp_moment(1.0, [h]) == 1.0
    assert moments.theta_mean(kernel, 2.0, 0, 1) == pytest.approx(2 * P)
    assert moments.theta_mean(kernel, 1.0, 0, 0) == pytest.approx(64 / 49)
    with pytest.raises(ValueError):
        moments.theta_mean(kernel, 1.0, (1.0, -1.0), 0)
