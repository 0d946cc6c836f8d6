"""Monte Carlo checks of the two isomorphism identities.

The bridge side is reduced by the Palm formula: for a soup at intensity alpha,
E[sum_omega G(omega, soup)] = alpha * mu(E[G(omega, soup + omega)]). With
G = L1(rho) L1(phi) F(fields) the soup side is (1/alpha) E[theta F(fields)],
and the loop side samples one extra loop from mu_eps/|mu_eps| with weight
|mu_eps| L1(rho) L1(phi). The identity is exact at the sampling cutoff.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .engine import Z_THRESHOLD, ComparisonRow, Estimator, check_budget_scale, run_sharded, two_sample_z
from .kernel import MarkovKernel
from .loops import BasedLoop, LoopMeasure, SoupBatch, sample_soup_batch
from .renorm import as_measure, build_A, build_B, psi_all, psi_n


@dataclass(frozen=True)
class TestFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]  # (n, J) -> (n,)
    bound: float

    __test__ = False  # not a pytest class

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.fn(np.atleast_2d(np.asarray(v, dtype=float)))


def _lorentz(v):
    return np.prod(1.0 / (1.0 + v * v), axis=1)


def _cosine(v):
    return np.clip(np.prod(np.cos(v), axis=1), -1.0, 1.0)


TEST_FUNCTIONS = {
    "one": TestFunction("one", lambda v: np.ones(v.shape[0]), 1.0),
    "lorentz": TestFunction("lorentz", _lorentz, 1.0),
    "cos": TestFunction("cos", _cosine, 1.0),
}


def get_test_function(name: str) -> TestFunction:
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown test function {name!r}; choose from {sorted(TEST_FUNCTIONS)}") from None


# ---------------------------------------------------------------- theta and the extra loop

def theta_values(batch: SoupBatch, rho, phi) -> np.ndarray:
    """theta^{rho,phi} = sum over loops of L1(rho) L1(phi), per soup."""
    r, p = as_measure(rho, batch.m).array, as_measure(phi, batch.m).array
    if np.any(r < 0) or np.any(p < 0):
        raise ValueError("rho and phi must be positive")
    return batch.per_soup_sum((batch.occ @ r) * (batch.occ @ p))


def extra_loop_weights(measure: LoopMeasure, occ: np.ndarray, rho, phi) -> np.ndarray:
    r, p = as_measure(rho, measure.m).array, as_measure(phi, measure.m).array
    return measure.total_mass * (occ @ r) * (occ @ p)


def sample_weighted_extra_loop(measure: LoopMeasure, rng: np.random.Generator, rho=0, phi=0):
    """One loop from mu_eps/|mu_eps| and its weight |mu_eps| L1(rho) L1(phi)."""
    measure.check_cutoff()
    masses = np.append(measure.trivial_mass, measure.jump_mass)
    s = int(rng.choice(len(masses), p=masses / masses.sum()))
    if s < measure.m:
        t = float(measure.sample_trivial_durations(s, 1, rng)[0])
        loop = BasedLoop((s,), (t,))
    else:
        _, paths = measure.sample_skeletons(1, rng, keep_paths=True)
        loop = BasedLoop(*paths[0])
    occ = loop.occupation(measure.m)[None, :]
    return loop, float(extra_loop_weights(measure, occ, rho, phi)[0])


def renormalized_on_loops(kernel: MarkovKernel, occ: np.ndarray, n: int, nu) -> np.ndarray:
    """L_n(nu)(omega) = sum_x nu(x) B_n(L(x)(omega)) for each row of occ."""
    nu = as_measure(nu, kernel.num_states)
    out = np.zeros(occ.shape[0])
    for x in nu.support():
        out += nu.weights[x] * build_B(float(kernel.green[x, x]), n)(occ[:, x])
    return out


def mixed_argument(measure: LoopMeasure, psi: np.ndarray, occ: np.ndarray, n: int, alpha: float, nu) -> np.ndarray:
    """sum_k C(n,k) (psi~_{n-k} x L_k)(nu): the Wick power of the soup with one extra loop added."""
    nu = as_measure(nu, measure.m)
    out = np.zeros(psi.shape[0])
    green = measure.kernel.green
    for x in nu.support():
        c = float(green[x, x])
        for k in range(n + 1):
            a = build_A(c, float(alpha), n - k)(psi[:, x])
            b = build_B(c, k)(occ[:, x])
            out += nu.weights[x] * math.comb(n, k) * a * b
    return out


def mixing_residual(batch: SoupBatch, measure: LoopMeasure, extra: np.ndarray, n: int, nu) -> float:
    """max |psi~_n(soup + extra) - sum_k C(n,k)(psi~_{n-k} x L_k)| over soups; extra holds one loop per soup."""
    nu = as_measure(nu, measure.m)
    psi = psi_all(batch, measure)
    lhs = np.zeros(batch.n_soups)
    for x in nu.support():
        a = build_A(float(measure.kernel.green[x, x]), float(batch.alpha), n)
        lhs += nu.weights[x] * a(psi[:, x] + extra[:, x])
    rhs = mixed_argument(measure, psi, extra, n, batch.alpha, nu)
    scale = max(1.0, float(np.abs(lhs).max()))
    return float(np.abs(lhs - rhs).max() / scale)


# ---------------------------------------------------------------- checks

def _soup_fields(batch, measure, blocks):
    return np.stack([psi_n(batch, measure, n, nu) for n, nu in blocks], axis=1)


def _loop_fields(kernel, occ, blocks):
    return np.stack([renormalized_on_loops(kernel, occ, n, nu) for n, nu in blocks], axis=1)


def _two_sided(name: str, lhs_task, rhs_task, budget: int, seed: int, threads: int, chunk: int,
               exact: float | None, detail: dict) -> ComparisonRow:
    t0 = time.perf_counter()
    lhs = run_sharded(lhs_task, budget, seed, name + "/lhs", chunk, threads).get("v", Estimator())
    rhs = run_sharded(rhs_task, budget, seed, name + "/rhs", chunk, threads).get("v", Estimator())
    lhs.name, rhs.name = name + " lhs", name + " rhs"
    scale = max(abs(lhs.mean), abs(rhs.mean), 1e-12)
    check_budget_scale(lhs, scale)
    check_budget_scale(rhs, scale)
    z = two_sample_z(lhs, rhs)
    info = {"reference": rhs.mean, "reference_stderr": rhs.stderr, **detail}
    if exact is not None:
        info["z_lhs_exact"] = lhs.z(exact)
        info["z_rhs_exact"] = rhs.z(exact)
    return ComparisonRow(name, "two_sample", abs(z) <= Z_THRESHOLD, exact, lhs.mean,
                         math.hypot(lhs.stderr, rhs.stderr), z, samples=lhs.count + rhs.count,
                         seconds=time.perf_counter() - t0, detail=info)


def iso_one_check(kernel: MarkovKernel, alpha: float, rho, phi, blocks: Sequence[tuple[int, object]],
                  F: TestFunction, budget: int, seed: int = 42, epsilon: float = 1e-8,
                  threads: int = 1, chunk: int = 50_000, name: str | None = None) -> ComparisonRow:
    """E[w F(psi_n(soup) + L_n(extra))] against (1/alpha) E[theta F(psi_n(soup))]."""
    measure = LoopMeasure(kernel, epsilon)
    blocks = [(int(n), as_measure(nu, kernel.num_states)) for n, nu in blocks]
    name = name or f"iso1 n={[n for n, _ in blocks]} F={F.name}"

    def lhs(rng, size):
        batch = sample_soup_batch(measure, alpha, size, rng)
        occ = measure.sample_normalized(size, rng)
        w = extra_loop_weights(measure, occ, rho, phi)
        args = _soup_fields(batch, measure, blocks) + _loop_fields(kernel, occ, blocks)
        return {"v": w * F(args)}

    def rhs(rng, size):
        batch = sample_soup_batch(measure, alpha, size, rng)
        return {"v": theta_values(batch, rho, phi) * F(_soup_fields(batch, measure, blocks)) / alpha}

    exact = None
    if F.name == "one":
        from .moments import theta_mean

        exact = theta_mean(kernel, 1.0, rho, phi)
    return _two_sided(name, lhs, rhs, budget, seed, threads, chunk, exact, {"alpha": alpha})


def iso_two_check(kernel: MarkovKernel, alpha: float, rho, phi, n: int, nu, F: TestFunction, budget: int,
                  seed: int = 42, epsilon: float = 1e-8, threads: int = 1, chunk: int = 50_000,
                  name: str | None = None) -> ComparisonRow:
    """Same reduction with Wick powers: the loop side uses the binomial mixing rule."""
    measure = LoopMeasure(kernel, epsilon)
    nu = as_measure(nu, kernel.num_states)
    name = name or f"iso2 n={n} F={F.name}"

    def lhs(rng, size):
        batch = sample_soup_batch(measure, alpha, size, rng)
        occ = measure.sample_normalized(size, rng)
        w = extra_loop_weights(measure, occ, rho, phi)
        arg = mixed_argument(measure, psi_all(batch, measure), occ, n, alpha, nu)
        return {"v": w * F(arg[:, None])}

    def rhs(rng, size):
        batch = sample_soup_batch(measure, alpha, size, rng)
        psi = psi_all(batch, measure)
        arg = np.zeros(size)
        for x in nu.support():
            arg += nu.weights[x] * build_A(float(kernel.green[x, x]), float(alpha), n)(psi[:, x])
        return {"v": theta_values(batch, rho, phi) * F(arg[:, None]) / alpha}

    return _two_sided(name, lhs, rhs, budget, seed, threads, chunk, None, {"alpha": alpha})
