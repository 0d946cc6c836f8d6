"""Acceptance criteria, each checked on the shipped configurations.

Every suite runs once per session at the config seed. Each criterion selects
its rows by check name, requires all of them to pass and records a one-line
verdict that is printed in the terminal summary.
"""

import time
from functools import lru_cache

import pytest

from loopsoup import checks
from loopsoup.config import load_config

from conftest import CONFIGS

VERDICTS: list[str] = []
SUITES = {
    "fixture_verify": checks.EXACT,
    "random4_verify": checks.EXACT,
    "fixture_estimate": checks.MONTE_CARLO,
    "random4_estimate": checks.MONTE_CARLO,
    "radial": None,
}


@lru_cache(maxsize=None)
def suite(name):
    config = load_config(CONFIGS / f"{name}.json")
    t0 = time.perf_counter()
    if name == "radial":
        rows, _ = checks.run_radial(config, None)
    else:
        rows = checks.run_suite(config, SUITES[name])
    return config, rows, time.perf_counter() - t0


def select(name, *prefixes, contains=None):
    _, rows, _ = suite(name)
    out = [r for r in rows if r.name.startswith(prefixes)]
    if contains is not None:
        out = [r for r in out if contains in r.name]
    assert out, f"{name}: no rows named {prefixes}"
    return out


def budget_of(name, check):
    config, _, _ = suite(name)
    return next(c.budget for c in config.checks if c.name == check)


def verdict(number, title, rows, extra_ok=True, note=""):
    bad = [r for r in rows if not r.passed]
    ok = not bad and extra_ok
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {len(rows) - len(bad)}/{len(rows)} rows"
    if note:
        line += f"; {note}"
    if bad:
        line += "; failing: " + ", ".join(f"{r.name} (z={r.z}, residual={r.residual})" for r in bad[:4])
    VERDICTS.append(line)
    assert ok, line


def test_criterion_01_green_oracle():
    rows, worst = [], 0.0
    for kernel in ("fixture", "random4"):
        exact = select(f"{kernel}_verify", "green: (-Q)u = I", "green: u = G_J")
        worst = max(worst, max(r.residual for r in exact))
        rows += exact + select(f"{kernel}_estimate", "green paths")
        assert budget_of(f"{kernel}_estimate", "green paths") >= 1_000_000
    verdict(1, "Green-function oracle", rows, worst <= 1e-12, f"max identity residual {worst:.1e}")


def test_criterion_02_loop_measure():
    rows = []
    for kernel in ("fixture", "random4"):
        rows += select(f"{kernel}_verify", "green: trivial plus skeleton")
        rows += select(f"{kernel}_estimate", "loop oracle", "loop counts")
    verdict(2, "Loop-measure exactness", rows)


def test_criterion_03_cycle_sums():
    config, _, _ = suite("fixture_verify")
    assert sorted(config.alpha) == [0.5, 1.0, 2.5]
    rows = select("fixture_verify", "cycle sums")
    verdict(3, "Cycle-sum identity", rows, len(rows) == 4 and all(r.residual <= 1e-12 for r in rows))


def test_criterion_04_counting():
    rows = select("fixture_verify", "remove and relabel")
    worked = [r for r in rows if "n=8" in r.name or "n=14" in r.name]
    verdict(4, "Counting formulas", rows, len(worked) == 2)


def test_criterion_05_mu_joint():
    rows = []
    for kernel in ("fixture", "random4"):
        rows += select(f"{kernel}_verify", "mu joint L", contains="against the B_n expansion")
    verdict(5, "Discrete joint loop moments", rows, all(r.residual <= 1e-9 for r in rows))


def test_criterion_06_soup_moments():
    rows = select("fixture_estimate", "soup moments")
    for kernel in ("fixture", "random4"):
        rows += select(f"{kernel}_verify", "partition identity")
    verdict(6, "Soup moment formulas", rows)


def test_criterion_07_wick_covariance():
    rows = select("fixture_estimate", "wick covariance")
    verdict(7, "Wick covariance", rows)


def test_criterion_08_isomorphism():
    rows = select("fixture_estimate", "iso1", "iso2")
    slow = [r for r in rows if r.seconds > 180]
    samples_ok = all(r.samples >= 2_000_000 for r in rows)
    rows += select("fixture_estimate", "theta")
    verdict(8, "Isomorphism theorems", rows, not slow and samples_ok,
            f"slowest row {max(r.seconds for r in rows):.0f} s")


def test_criterion_09_algebraic_identities():
    rows = []
    for kernel in ("fixture", "random4"):
        rows += select(f"{kernel}_verify", "chaos algebra", "chaos decomposition")
    verdict(9, "Algebraic identity residuals", rows)


def test_criterion_10_chaos_statistics():
    rows = select("fixture_estimate", "chaos mean", "chaos orthogonality", "exponential chaos",
                  "multi exponential", "martingale")
    verdict(10, "Poisson chaos statistics", rows)


def test_criterion_11_radial():
    rows = select("radial", "case")
    slopes = [r for r in rows if "slope" in r.name]
    kinds = {k for k in ("theta_ratio", "two_term", "ball_growth", "chain_growth") if any(k in r.name for r in rows)}
    verdict(11, "Radial asymptotics", rows, len(slopes) >= 4 and len(kinds) == 4,
            f"{len(slopes)} slope rows, max slope error {max(r.residual for r in slopes):.1e}")


def test_suite_wall_time():
    total = sum(suite(name)[2] for name in SUITES)
    VERDICTS.append(f"suite wall time {total:.0f} s over {len(SUITES)} configurations")
    assert total <= 15 * 60
