import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loopsoup.isomorphism import (
    extra_loop_weights,
    get_test_function,
    iso_one_check,
    iso_two_check,
    mixing_residual,
    sample_weighted_extra_loop,
    theta_values,
)
from loopsoup.errors import BudgetTooSmall
from loopsoup.loops import LoopMeasure, sample_soup_batch


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.floats(0.2, 3.0))
def test_mixing_rule(n, seed, alpha):
    # A_n of psi plus one extra loop equals the binomial mix of A_{n-k}(psi) and B_k(extra)
    from loopsoup.kernel import example_kernel

    meas = LoopMeasure(example_kernel(), 1e-8)
    rng = np.random.default_rng(seed)
    batch = sample_soup_batch(meas, alpha, 50, rng)
    extra = meas.sample_normalized(50, rng)
    tol = 1e-12 if n < 4 else 1e-10
    assert mixing_residual(batch, meas, extra, n, (0.7, -0.4)) <= tol


def test_theta_literal(measure, rng):
    batch = sample_soup_batch(measure, 1.0, 20, rng)
    th = theta_values(batch, 0, (0.5, 1.0))
    for s in range(20):
        occ = batch.occ[batch.soup == s]
        assert th[s] == pytest.approx(float(np.sum(occ[:, 0] * (0.5 * occ[:, 0] + occ[:, 1]))))
    with pytest.raises(ValueError):
        theta_values(batch, (1.0, -0.1), 0)


def test_extra_loop_weight(measure, rng):
    loop, w = sample_weighted_extra_loop(measure, rng, 0, 1)
    occ = loop.occupation(2)
    assert w == pytest.approx(measure.total_mass * occ[0] * occ[1])
    assert extra_loop_weights(measure, occ[None, :], 0, 0)[0] == pytest.approx(measure.total_mass * occ[0] ** 2)


def test_test_functions():
    v = np.array([[0.0, 1.0], [2.0, 0.0]])
    assert np.allclose(get_test_function("lorentz")(v), [0.5, 0.2])
    assert np.allclose(get_test_function("one")(v), 1.0)
    assert np.all(np.abs(get_test_function("cos")(v)) <= 1)
    with pytest.raises(ValueError):
        get_test_function("nope")


def test_iso_budget_guard(kernel):
    with pytest.raises(BudgetTooSmall):
        iso_two_check(kernel, 1.5, 1, 1, 2, 0, get_test_function("cos"), 2_000, seed=5, chunk=1_000)


def test_iso_one_against_theta_mean(kernel):
    row = iso_one_check(kernel, 1.0, 0, 1, [(1, 0)], get_test_function("one"), 200_000, seed=3)
    assert row.passed, row.to_dict()
    assert abs(row.detail["z_lhs_exact"]) < 4 and abs(row.detail["z_rhs_exact"]) < 4
    assert row.samples == 400_000
