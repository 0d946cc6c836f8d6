import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loopsoup.errors import CutoffTooLarge, InfiniteMass
from loopsoup.kernel import build_kernel
from loopsoup.loops import (
    BasedLoop,
    LoopMeasure,
    LoopSoup,
    OccupationPolynomial,
    mu_expectation,
    mu_moment,
    sample_loop_soup,
    sample_soup_batch,
    soups_from_text,
    soups_to_text,
)


def test_mu_moment_examples(kernel):
    assert mu_moment(kernel, (0, 1)) == pytest.approx(8 / 49, rel=1e-14)
    assert mu_moment(kernel, (0, 0)) == pytest.approx(64 / 49, rel=1e-14)
    assert mu_moment(kernel, (1,)) == pytest.approx(8 / 7, rel=1e-14)


def test_mu_expectation_examples(kernel):
    L0 = OccupationPolynomial.occupation(2, 0)
    L1 = OccupationPolynomial.occupation(2, 1)
    assert mu_expectation(kernel, L0 * L0) == pytest.approx(64 / 49, rel=1e-13)
    assert mu_expectation(kernel, L0**3) == pytest.approx(2 * (8 / 7) ** 3, rel=1e-13)
    assert mu_expectation(kernel, L0 * L1 + L1 * L0) == pytest.approx(16 / 49, rel=1e-13)
    assert mu_expectation(kernel, L0) == pytest.approx(8 / 7, rel=1e-14)
    with pytest.raises(InfiniteMass):
        mu_expectation(kernel, L0 * L1 + 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=5), st.integers(0, 4))
def test_mu_moment_rotation_invariant(kernel4, pts, shift):
    rot = pts[shift % len(pts):] + pts[: shift % len(pts)]
    assert mu_moment(kernel4, pts) == pytest.approx(mu_moment(kernel4, rot), rel=1e-12)


def test_epsilon_compensator(kernel, measure):
    assert measure.epsilon_compensator(0, 0.0) == pytest.approx(8 / 7)
    assert measure.epsilon_compensator(0) == pytest.approx(8 / 7 - (1 - math.exp(-1e-8)), abs=1e-16)
    assert measure.epsilon_compensator(0, math.inf) == pytest.approx(8 / 7 - 1.0)


def test_decomposition_of_first_moment(kernel4):
    G = np.linalg.inv(np.eye(4) - kernel4.jump_chain)
    lhs = 1 / kernel4.exit_rate + (np.diag(G) - 1) / kernel4.exit_rate
    assert np.allclose(lhs, np.diag(kernel4.green), rtol=1e-12)


def test_cutoff_too_large(kernel):
    with pytest.raises(CutoffTooLarge):
        sample_soup_batch(LoopMeasure(kernel, 2.0), 1.0, 10, np.random.default_rng(0))


def test_pure_killing_soup_is_trivial(rng):
    meas = LoopMeasure(build_kernel([[-1.0, 0.0], [0.0, -2.0]]), 1e-6)
    batch = sample_soup_batch(meas, 1.0, 200, rng)
    assert np.all((batch.occ > 0).sum(axis=1) == 1)
    assert batch.nontrivial_counts().sum() == 0


def test_soup_occupation_mean(measure, rng):
    batch = sample_soup_batch(measure, 1.0, 100_000, rng)
    s = batch.per_soup_sum(batch.occ[:, 0])
    z = (s.mean() - measure.epsilon_compensator(0)) / (s.std() / math.sqrt(s.size))
    assert abs(z) < 4


def test_loop_text_round_trip(measure):
    soup = sample_loop_soup(measure, 1.0, 123)
    back = LoopSoup.from_text(soup.to_text(), 1.0, measure.epsilon)
    assert [lp.to_line() for lp in back.loops] == [lp.to_line() for lp in soup.loops]
    assert np.allclose(back.occupations(2), soup.occupations())


def test_soup_file_round_trip(measure):
    soups = [sample_loop_soup(measure, 1.0, s) for s in range(5)]
    back = soups_from_text(soups_to_text(soups))
    assert len(back) == 5
    for a, b in zip(soups, back):
        assert a.seed == b.seed
        assert a.to_text() == b.to_text()
    assert soups_from_text("") == []


def test_based_loop_validation():
    assert BasedLoop.from_line("T 1 0.5").trivial
    with pytest.raises(ValueError):
        BasedLoop((0, 0), (1.0, 1.0))
    with pytest.raises(ValueError):
        BasedLoop.from_line("X 1 2")


def test_sampling_is_reproducible(measure):
    a = sample_soup_batch(measure, 1.0, 50, np.random.Generator(np.random.Philox(5)))
    b = sample_soup_batch(measure, 1.0, 50, np.random.Generator(np.random.Philox(5)))
    assert np.array_equal(a.occ, b.occ) and np.array_equal(a.soup, b.soup)
