import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loopsoup.errors import NegativeRate, SingularGenerator
from loopsoup.kernel import build_kernel, simulate_occupations, simulate_path

U = np.array([[8 / 7, 4 / 7], [2 / 7, 8 / 7]])


def test_fixture_green_matrix(kernel):
    assert np.allclose(kernel.green, U, rtol=1e-14)
    assert kernel.green[0, 1] != kernel.green[1, 0]


def test_fixture_jump_chain_and_mass(kernel):
    assert np.allclose(kernel.jump_chain, [[0, 0.5], [0.25, 0]])
    assert kernel.jump_mass == pytest.approx(-np.log(0.875), rel=1e-14)
    assert kernel.jump_mass == pytest.approx(0.133531, abs=1e-6)


def test_pure_killing_is_identity():
    k = build_kernel([[-1.0, 0.0], [0.0, -1.0]])
    assert np.array_equal(k.green, np.eye(2))
    assert k.jump_mass == 0.0


def test_errors():
    with pytest.raises(SingularGenerator):
        build_kernel([[-1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(NegativeRate):
        build_kernel([[-1.0, -0.5], [0.25, -1.0]])


def test_pure_killing_path_is_one_sojourn(rng):
    k = build_kernel([[-1.0, 0.0], [0.0, -1.0]])
    path = simulate_path(k, 0, rng)
    assert path.states.tolist() == [0]
    assert path.durations[0] > 0


def test_occupation_means_match_green(kernel, rng):
    for x in range(2):
        occ = simulate_occupations(kernel, x, 200_000, rng)
        z = (occ.mean(axis=0) - kernel.green[x]) / (occ.std(axis=0) / np.sqrt(len(occ)))
        assert np.all(np.abs(z) < 4)


@st.composite
def generators(draw):
    m = draw(st.integers(1, 5))
    off = np.array(draw(st.lists(st.floats(0, 2), min_size=m * m, max_size=m * m))).reshape(m, m)
    np.fill_diagonal(off, 0)
    kill = np.array(draw(st.lists(st.floats(0.05, 2), min_size=m, max_size=m)))
    return off - np.diag(off.sum(axis=1) + kill)


@settings(max_examples=60, deadline=None)
@given(generators())
def test_resolvent_identities(Q):
    k = build_kernel(Q)
    m = len(Q)
    assert np.abs(-Q @ k.green - np.eye(m)).max() <= 1e-12 * max(1.0, np.abs(k.green).max() * np.abs(Q).max())
    G = np.linalg.inv(np.eye(m) - k.jump_chain)
    assert np.allclose(G / k.exit_rate[None, :], k.green, rtol=1e-10, atol=1e-14)
    assert np.all(k.green > -1e-14)
