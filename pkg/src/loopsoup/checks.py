"""The check registry behind ``verify`` and ``estimate``.

A check kind maps a config entry to one or more ComparisonRows. Exact kinds
compare two independent computations of the same number; Monte Carlo kinds
compare sample means against closed forms (or two samplers against each
other). Every kind draws randomness from its own stream keyed by the check
name, so reports depend only on the config and the seed.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable

import numpy as np
import scipy.stats

from . import chaos, combinatorics as comb, moments, renorm
from .config import CheckSpec, Config
from .engine import (
    Z_THRESHOLD,
    ComparisonRow,
    Estimator,
    estimate_row,
    loop_stratum_oracles,
    residual_row,
    run_sharded,
    stream_for,
)
from .errors import BudgetTooSmall, ConfigError, LoopSoupError
from .isomorphism import (
    extra_loop_weights,
    get_test_function,
    iso_one_check,
    iso_two_check,
    mixing_residual,
    theta_values,
)
from .kernel import MarkovKernel, build_kernel, example_kernel
from .loops import LoopMeasure, OccupationPolynomial, SoupBatch, mu_moment, sample_soup_batch

EXACT, MONTE_CARLO = "exact", "mc"


@dataclass
class Context:
    config: Config
    seed: int
    threads: int

    @cached_property
    def kernel(self) -> MarkovKernel:
        if self.config.rates is None:
            return example_kernel()
        return build_kernel(self.config.rates)

    @property
    def m(self) -> int:
        return self.kernel.num_states

    def nu(self, ref) -> renorm.PointMeasure:
        return renorm.PointMeasure(np.asarray(self.config.measure(ref, self.m), dtype=float))

    def positive(self, ref) -> renorm.PointMeasure:
        nu = self.nu(ref)
        if np.any(nu.array < 0):
            raise ConfigError(f"measure {ref!r} must be positive")
        return nu

    def loop_measure(self, epsilon: float | None = None) -> LoopMeasure:
        return LoopMeasure(self.kernel, self.config.epsilon if epsilon is None else epsilon)

    def rng(self, key: str) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(stream_for(self.seed, key)))


@dataclass(frozen=True)
class Kind:
    fn: Callable[[Context, CheckSpec, dict], list[ComparisonRow]]
    mode: str
    defaults: dict


REGISTRY: dict[str, Kind] = {}


def register(name: str, mode: str, **defaults):
    def wrap(fn):
        REGISTRY[name] = Kind(fn, mode, defaults)
        return fn

    return wrap


def _alpha(ctx: Context, p: dict) -> float:
    a = p.get("alpha")
    a = ctx.config.alpha[0] if a is None else float(a)
    if a <= 0:
        raise ConfigError("alpha must be positive")
    return a


def _need_budget(spec: CheckSpec, minimum: int = 2) -> int:
    if spec.budget < minimum:
        raise BudgetTooSmall(f"budget {spec.budget} is below the minimum of {minimum} samples")
    return spec.budget


def _rel(a: float, b: float, scale: float | None = None) -> float:
    s = max(abs(b), abs(a), 1e-300) if scale is None else max(scale, 1e-300)
    return abs(a - b) / s


# ================================================================ exact kinds

@register("green_identity", EXACT, tolerance=1e-12)
def _green_identity(ctx, spec, p):
    k = ctx.kernel
    m = k.num_states
    Q = np.asarray(k.rates, dtype=float)
    u = k.green
    res1 = float(np.abs(-Q @ u - np.eye(m)).max())
    GJ = np.linalg.inv(np.eye(m) - k.jump_chain)
    res2 = float((np.abs(GJ / k.exit_rate[None, :] - u) / np.abs(u).max()).max())
    diag = 1.0 / k.exit_rate + (np.diag(GJ) - 1.0) / k.exit_rate
    res3 = float((np.abs(diag - np.diag(u)) / np.abs(np.diag(u))).max())
    tol = p["tolerance"]
    return [
        residual_row("(-Q)u = I", res1, tol),
        residual_row("u = G_J diag(1/q)", res2, tol),
        residual_row("trivial plus skeleton first moment = u(x,x)", res3, tol),
    ]


@register("cycle_sum", EXACT, n_max=4, alphas=[0.5, 1.0, 2.5], tolerance=1e-12)
def _cycle_sum(ctx, spec, p):
    rows = []
    for n in range(1, int(p["n_max"]) + 1):
        hist = comb.cycle_histogram((n, n), False)
        worst = 0.0
        for a in p["alphas"]:
            lhs = sum(c * a**cyc for cyc, c in hist.items())
            worst = max(worst, _rel(lhs, comb.rising_factorial_sum(n, a)))
        rows.append(residual_row(f"sum alpha^c over P_(2n,a), n={n}", worst, p["tolerance"],
                                 samples=sum(hist.values())))
    return rows


@register("remove_relabel", EXACT, plus_max=5, outside_max=3, size_max=8)
def _remove_relabel(ctx, spec, p):
    plus_max, out_max, size_max = int(p["plus_max"]), int(p["outside_max"]), int(p["size_max"])
    rows = []
    for circle in (True, False):
        seen, bad, total = set(), 0, 0
        for m_out in range(1, out_max + 1):
            for n_in in range(1, plus_max + 1):
                if m_out + n_in > (size_max if circle else size_max - 1):
                    continue
                for (sigma, _), count in comb.brute_force_preimages(m_out, n_in, circle).items():
                    if sigma.size_plus > plus_max:
                        continue
                    seen.add(sigma)
                    total += 1
                    if count != comb.remove_relabel_count(sigma, n_in):
                        bad += 1
        wanted = {s for s in comb.sigma_indices(plus_max, circuits=not circle)}
        missing = len(wanted - seen - {comb.SigmaIndex()})
        label = "circle" if circle else "all permutations"
        rows.append(residual_row(f"preimage counts, {label}", float(bad + missing), 0.0, samples=total,
                                 sigmas=len(seen), missing_sigmas=missing))
    worked = [
        (comb.SigmaIndex.make({1: 2, 2: 1}), 8, math.factorial(8) * math.factorial(4) // 2),
        (comb.SigmaIndex.make({1: 2, 2: 1}, {3: 2}), 14,
         math.factorial(14) * math.factorial(4) // (2 * 2 * 9)),
        (comb.SigmaIndex(), 0, 1),
        (comb.SigmaIndex(), 5, 120),
    ]
    for sigma, n, want in worked:
        got = comb.remove_relabel_count(sigma, n)
        rows.append(ComparisonRow(f"count sigma={sigma.chains}/{sigma.circuits} n={n}", "identity",
                                  got == want, exact=float(want), estimate=float(got),
                                  residual=float(abs(got - want))))
    return rows


def _disjoint_layouts(ctx: Context, max_order: int, supports):
    """Block specs (n_i, nu_i) with disjoint supports, k >= 2, total order <= max_order."""
    k_max = len(supports)
    for k in range(2, k_max + 1):
        for sizes in itertools.product(range(1, max_order + 1), repeat=k):
            if sum(sizes) > max_order:
                continue
            for chosen in itertools.combinations(range(k_max), k):
                yield [(s, supports[c]) for s, c in zip(sizes, chosen)]


@register("mu_joint_L", EXACT, max_order=6, measures=None, tolerance=1e-9, exploratory=False)
def _mu_joint_L(ctx, spec, p):
    k = ctx.kernel
    refs = p["measures"] if p["measures"] is not None else list(range(k.num_states))
    nus = [ctx.nu(r) for r in refs]
    sup = [set(nu.support()) for nu in nus]
    for i, j in itertools.combinations(range(len(nus)), 2):
        if sup[i] & sup[j]:
            raise ConfigError("mu_joint_L needs measures with disjoint supports")
    worst, count = 0.0, 0
    for blocks in _disjoint_layouts(ctx, int(p["max_order"]), nus):
        a = moments.mu_joint_L(k, blocks)
        b, scale = moments.expand_mu_B_product(k, blocks, with_scale=True)
        worst = max(worst, _rel(a, b, max(abs(b), scale)))
        count += 1
    rows = [residual_row(f"mu_joint_L against the B_n expansion, order <= {p['max_order']}", worst,
                         p["tolerance"], samples=count)]
    if p["exploratory"]:
        # shared support: the alternation is over blocks, not states, so no equality is claimed
        for n1, n2 in [(1, 1), (2, 2), (1, 2)]:
            blocks = [(n1, nus[0]), (n2, nus[0])]
            a = moments.mu_joint_L(k, blocks)
            b = moments.expand_mu_B_product(k, blocks)
            rows.append(ComparisonRow(f"same support ({n1},{n2})", "exploratory", True, exact=b,
                                      estimate=a, residual=abs(a - b)))
    return rows


def _layouts(max_total: int, max_blocks: int):
    for k in range(1, max_blocks + 1):
        for sizes in itertools.combinations_with_replacement(range(1, max_total + 1), k):
            if sum(sizes) <= max_total:
                yield sizes


@register("partition_identity", EXACT, max_total=6, max_blocks=4, measures=[0, 1], tolerance=1e-12)
def _partition_identity(ctx, spec, p):
    k = ctx.kernel
    nus = [ctx.nu(r) for r in p["measures"]]
    worst, count = 0.0, 0
    for sizes in _layouts(int(p["max_total"]), int(p["max_blocks"])):
        blocks = [(s, nus[i % len(nus)]) for i, s in enumerate(sizes)]
        for a in ctx.config.alpha:
            lhs = moments.soup_joint_psi(k, a, blocks)
            rhs = moments.partition_moment(k, a, blocks)
            worst = max(worst, 0.0 if lhs == rhs else _rel(lhs, rhs))
            count += 1
    rows = [residual_row("soup_joint_psi = partition sum over mu_joint_L", worst, p["tolerance"], samples=count)]
    worst = 0.0
    for n in range(1, 4):
        for a in ctx.config.alpha:
            lhs = moments.soup_joint_psitilde(k, a, [(n, nus[0]), (n, nus[-1])])
            rhs = moments.wick_pair_value(k, a, n, nus[0], nus[-1])
            worst = max(worst, _rel(lhs, rhs))
    rows.append(residual_row("soup_joint_psitilde (n,n) = K(alpha,n) pair sum", worst, p["tolerance"]))
    return rows


@register("renorm_series", EXACT, n_max=6, c_values=[0.37, 1.0, 2.6], tolerance=1e-10)
def _renorm_series(ctx, spec, p):
    worst_b = worst_a = worst_c = 0.0
    n_max = int(p["n_max"])
    alphas = list(ctx.config.alpha)
    for c in p["c_values"]:
        sb = renorm.series_coeffs_B(c, n_max)
        for a in alphas:
            sa = renorm.series_coeffs_A(c, a, n_max)
            for n in range(1, n_max + 1):
                A = renorm.build_A(c, a, n)
                worst_a = max(worst_a, max(_rel(float(x), float(y), 1 + abs(float(y)))
                                           for x, y in zip(A.coeffs, sa[n])))
        for n in range(1, n_max + 1):
            B = renorm.build_B(c, n)
            worst_b = max(worst_b, max(_rel(float(x), float(y), 1 + abs(float(y))) for x, y in zip(B.coeffs, sb[n])))
            closed = [0.0] + [math.factorial(n) * math.comb(n - 1, j - 1) * (-c) ** (n - j) / math.factorial(j)
                              for j in range(1, n + 1)]
            worst_c = max(worst_c, max(_rel(float(x), y, 1 + abs(y)) for x, y in zip(B.coeffs, closed)))
    tol = p["tolerance"]
    return [
        residual_row("B_n recursion = generating function", worst_b, tol),
        residual_row("A_n recursion = generating function", worst_a, tol),
        residual_row("B_n closed form", worst_c, tol),
    ]


def synthetic_batch(rng: np.random.Generator, m: int, n_soups: int, alpha: float, max_loops: int = 20,
                    kernel: MarkovKernel | None = None) -> SoupBatch:
    """Arbitrary finite loop multisets: random occupation vectors on random supports."""
    occs = []
    for _ in range(n_soups):
        n = int(rng.integers(0, max_loops + 1))
        occ = rng.exponential(0.7, size=(n, m)) * (rng.random((n, m)) < 0.6)
        occ[np.arange(n), rng.integers(0, m, size=n)] += rng.exponential(0.5, size=n) + 1e-3
        occs.append(occ)
    return SoupBatch.from_occupations(occs, alpha, 0.0, kernel)


@register("chaos_identities", EXACT, soups=100, tolerance=1e-10, series_top=30, series_gap=1e-8)
def _chaos_identities(ctx, spec, p):
    k = ctx.kernel
    m = k.num_states
    a = ctx.config.alpha[0]
    rng = ctx.rng(spec.name)
    batch = synthetic_batch(rng, m, int(p["soups"]), a, kernel=k)
    tol = p["tolerance"]
    g = [chaos.SoupFunctional.occupation(k, x % m, s) for x, s in [(0, 1.0), (1, 0.5), (0, -0.8), (1, 1.3)]]
    sq = chaos.SoupFunctional.from_poly(k, OccupationPolynomial.occupation(m, 0, 2) * 0.3)
    g.append(sq)
    rows = []

    def rel_res(res, scale):
        return float(np.max(np.abs(res) / np.maximum(1.0, np.abs(scale))))

    def phis(sizes, gs):
        out = np.ones(batch.n_soups)
        for w in comb.windows_from_sizes(sizes):
            out = out * chaos.phi_n(batch, [gs[i] for i in w])
        return out

    for label, sizes, gs in [
        ("phi1 phi1 = phi2 + phi1(g1 g2)", (1, 1), g[:2]),
        ("phi2 phi1 three-term expansion", (2, 1), g[:3]),
        ("phi2 phi2 seven-term expansion", (2, 2), g[:4]),
        ("separated partition expansion (3,2)", (3, 2), g[:5]),
        ("separated partition expansion (1,2,1)", (1, 2, 1), g[:4]),
        ("power expansion phi1^4", (1, 1, 1, 1), [g[0]] * 4),
    ]:
        rows.append(residual_row(label, rel_res(chaos.wick_expand(batch, sizes, gs), phis(sizes, gs)), tol,
                                 samples=batch.n_soups))

    # phi_n by Moebius inversion against the literal tuple sum
    small = synthetic_batch(rng, m, 20, a, max_loops=7, kernel=k)
    worst = 0.0
    for n in (1, 2, 3):
        fast = chaos.phi_n(small, g[:n])
        for s in range(small.n_soups):
            sel = small.soup == s
            lit = chaos.phi_n_literal([gj.values(small)[sel] for gj in g[:n]])
            worst = max(worst, abs(fast[s] - lit) / max(1.0, abs(lit)))
    rows.append(residual_row("phi_n by inversion = literal tuple sum", worst, tol, samples=small.n_soups))

    # exponential chaos product rule
    f1 = chaos.SoupFunctional.on_site(k, 0, lambda t: 0.5 * np.tanh(t))
    f2 = chaos.SoupFunctional.on_site(k, 0, lambda t: -0.3 * (1 - np.exp(-t)))
    prod = f1 * f2
    lhs = chaos.exp_chaos(batch, f1) * chaos.exp_chaos(batch, f2)
    vals = f1.values(batch) + f2.values(batch) + prod.values(batch)
    rhs = chaos.exp_chaos(batch, vals, mu=f1.mu + f2.mu + prod.mu) * math.exp(a * prod.mu)
    rows.append(residual_row("E(f) E(g) = E(f+g+fg) exp(alpha mu(fg))", rel_res(lhs - rhs, lhs), tol,
                             samples=batch.n_soups))

    # exponential chaos against its Wick series
    top = int(p["series_top"])
    gap = np.abs(chaos.exp_chaos(batch, f1) - chaos.exp_chaos_series(batch, f1, top))
    rows.append(residual_row(f"E(g) = sum_(n<={top}) I_n(g)/n!", float(gap.max()), p["series_gap"],
                             samples=batch.n_soups))

    # martingale coupling: I_n at alpha + alpha' splits over the two strata
    ext = synthetic_batch(rng, m, batch.n_soups, 0.7, kernel=k)
    pair = chaos.CoupledSoupPair(batch, ext)
    for n in (1, 2, 3):
        res = chaos.martingale_decompose(pair, g[:n])
        full = chaos.I_n(pair.combined, g[:n], a + 0.7)
        rows.append(residual_row(f"I_{n} split over coupled strata", rel_res(res, full), tol, samples=batch.n_soups))

    # additivity of Wick powers under adding one loop
    measure = ctx.loop_measure()
    extra = synthetic_batch(rng, m, batch.n_soups, a, max_loops=1, kernel=k)
    extra_occ = np.zeros((batch.n_soups, m))
    np.add.at(extra_occ, extra.soup, extra.occ)
    for n in (1, 2, 3, 4):
        res = mixing_residual(batch, measure, extra_occ, n, ctx.nu(0))
        rows.append(residual_row(f"Wick power of soup plus one loop, n={n}", res, tol * 100 if n == 4 else tol,
                                 samples=batch.n_soups))
    return rows


@register("chaos_decomposition", EXACT, soups=100, epsilon=1e-10, n_max=3, measure=0, tolerance=1e-6)
def _chaos_decomposition(ctx, spec, p):
    measure = ctx.loop_measure(float(p["epsilon"]))
    a = _alpha(ctx, p)
    batch = sample_soup_batch(measure, a, int(p["soups"]), ctx.rng(spec.name))
    nu = ctx.nu(p["measure"])
    rows = []
    for n in range(1, int(p["n_max"]) + 1):
        lhs = renorm.psi_tilde_n(batch, measure, n, None, nu)
        rhs = renorm.wick_power_by_chaos(batch, measure, n, nu)
        res = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))
        rows.append(residual_row(f"Wick power = sum of I over partitions, n={n}", res, p["tolerance"],
                                 samples=batch.n_soups))
        lhs = renorm.I_ll_chaos(batch, measure, (n,), nu)
        rhs = renorm.psi_n(batch, measure, n, nu)
        res = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))))
        rows.append(residual_row(f"I_(n) = psi_n, n={n}", res, p["tolerance"], samples=batch.n_soups))
    return rows


# ================================================================ Monte Carlo kinds

def _sharded(ctx, spec, task, budget, chunk=50_000):
    return run_sharded(task, budget, ctx.seed, spec.name, chunk, ctx.threads)


@register("green_paths", MONTE_CARLO, starts=None)
def _green_paths(ctx, spec, p):
    from .kernel import simulate_occupations

    k = ctx.kernel
    budget = _need_budget(spec)
    rows = []
    starts = p["starts"] if p["starts"] is not None else range(k.num_states)
    for x in starts:
        t0 = time.perf_counter()
        est = run_sharded(lambda rng, n, x=x: {y: simulate_occupations(k, x, n, rng)[:, y] for y in range(k.num_states)},
                          budget, ctx.seed, f"{spec.name}/{x}", 50_000, ctx.threads)
        dt = time.perf_counter() - t0
        for y in range(k.num_states):
            rows.append(estimate_row(f"occupation of {y} from {x}", est[y], float(k.green[x, y]), dt / k.num_states))
    return rows


def _tuples(m: int, size_max: int):
    for s in range(1, size_max + 1):
        yield from itertools.combinations_with_replacement(range(m), s)


@register("loop_oracle", MONTE_CARLO, size_max=3)
def _loop_oracle(ctx, spec, p):
    measure = ctx.loop_measure()
    budget = _need_budget(spec)
    m = measure.m
    tuples = list(_tuples(m, int(p["size_max"])))
    polys = []
    for t in tuples:
        poly = OccupationPolynomial(m, {(0,) * m: 1})
        for x in t:
            poly = poly * OccupationPolynomial.occupation(m, x)
        polys.append(poly)
    t0 = time.perf_counter()
    ests = loop_stratum_oracles(measure, polys, budget, ctx.rng(spec.name))
    dt = time.perf_counter() - t0
    return [estimate_row(f"mu(L{t})", e, mu_moment(ctx.kernel, t), dt / len(tuples)) for t, e in zip(tuples, ests)]


@register("loop_counts", MONTE_CARLO, bins=6, p_min=1e-3)
def _loop_counts(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    budget = _need_budget(spec, 100)
    t0 = time.perf_counter()
    batch = sample_soup_batch(measure, a, budget, ctx.rng(spec.name))
    lam = a * measure.jump_mass
    counts = batch.nontrivial_counts()
    bins = int(p["bins"])
    obs = np.bincount(np.minimum(counts, bins - 1), minlength=bins).astype(float)
    probs = scipy.stats.poisson.pmf(np.arange(bins - 1), lam)
    probs = np.append(probs, 1.0 - probs.sum())
    exp = probs * budget
    keep = exp >= 5  # pool sparse cells into the last kept one
    last = np.max(np.nonzero(keep)[0])
    obs_p = np.append(obs[:last], obs[last:].sum())
    exp_p = np.append(exp[:last], exp[last:].sum())
    pval = float(scipy.stats.chisquare(obs_p, exp_p).pvalue) if len(obs_p) > 1 else 1.0
    dt = time.perf_counter() - t0
    rows = [ComparisonRow("nontrivial loop count Poisson(alpha |mu_J|)", "chi2", pval > p["p_min"], exact=lam,
                          estimate=float(counts.mean()), residual=pval, samples=budget, seconds=dt,
                          detail={"cells": len(obs_p), "p_value": pval})]
    occ = batch.per_soup_sum(batch.occ[:, 0])
    rows.append(estimate_row("soup occupation of 0", Estimator.from_values(occ), a * measure.epsilon_compensator(0)))
    psi = renorm.psi_all(batch, measure)[:, 0]
    mu_eps = ctx.kernel.green[0, 0] ** 2 - measure.truncation_gap(0, 2)
    rows.append(estimate_row("variance of psi(0)", Estimator.from_values(psi**2), a * mu_eps))
    return rows


def _blocks_from(ctx, raw):
    return [(int(n), ctx.nu(ref)) for n, ref in raw]


_DEFAULT_SOUP_LAYOUTS = [[[1, 0], [1, 1]], [[2, 0], [1, 1]], [[2, 0], [2, 1]], [[1, 0], [3, 1]],
                         [[1, 0], [1, 1], [1, 0]], [[1, 0], [1, 1], [2, 0]], [[1, 0], [1, 1], [1, 0], [1, 1]]]


@register("soup_moment", MONTE_CARLO, layouts=_DEFAULT_SOUP_LAYOUTS, alpha=None, tilde=True, plain=True)
def _soup_moment(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    budget = _need_budget(spec)
    layouts = [_blocks_from(ctx, lay) for lay in p["layouts"]]
    kinds = [t for t, on in (("psi", p["plain"]), ("psitilde", p["tilde"])) if on]

    def task(rng, n):
        batch = sample_soup_batch(measure, a, n, rng)
        cache = {}
        out = {}
        for i, blocks in enumerate(layouts):
            for kind in kinds:
                v = np.ones(n)
                for order, nu in blocks:
                    key = (kind, order, tuple(nu.weights))
                    if key not in cache:
                        cache[key] = (renorm.psi_n(batch, measure, order, nu) if kind == "psi"
                                      else renorm.psi_tilde_n(batch, measure, order, None, nu))
                    v = v * cache[key]
                out[(i, kind)] = v
        return out

    t0 = time.perf_counter()
    est = _sharded(ctx, spec, task, budget)
    dt = time.perf_counter() - t0
    rows = []
    for i, blocks in enumerate(layouts):
        label = ",".join(f"{n}@{list(nu.support())}" for n, nu in blocks)
        for kind in kinds:
            exact = (moments.soup_joint_psi if kind == "psi" else moments.soup_joint_psitilde)(ctx.kernel, a, blocks)
            rows.append(estimate_row(f"E[prod {kind}] ({label})", est[(i, kind)], float(exact),
                                     dt / (len(layouts) * len(kinds))))
    return rows


@register("wick_covariance", MONTE_CARLO, n_max=3, nu=0, nu2=1, alpha=None)
def _wick_covariance(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    budget = _need_budget(spec)
    nu, nu2 = ctx.nu(p["nu"]), ctx.nu(p["nu2"])
    top = int(p["n_max"])

    def task(rng, size):
        batch = sample_soup_batch(measure, a, size, rng)
        f = {n: renorm.psi_tilde_n(batch, measure, n, None, nu) for n in range(1, top + 1)}
        g = {n: renorm.psi_tilde_n(batch, measure, n, None, nu2) for n in range(1, top + 1)}
        return {(n, j): f[n] * g[j] for n in range(1, top + 1) for j in range(1, top + 1)}

    t0 = time.perf_counter()
    est = _sharded(ctx, spec, task, budget)
    dt = time.perf_counter() - t0
    rows = []
    for (n, j), e in sorted(est.items()):
        exact = moments.wick_pair_value(ctx.kernel, a, n, nu, nu2) if n == j else 0.0
        rows.append(estimate_row(f"E[psi~_{n} psi~_{j}]", e, exact, dt / len(est)))
    return rows


def _iso_common(ctx, p):
    return dict(rho=ctx.positive(p["rho"]), phi=ctx.positive(p["phi"]), F=get_test_function(p["F"]))


@register("iso_one", MONTE_CARLO, rho=0, phi=0, blocks=[[1, 0]], F="lorentz", alpha=None, chunk=50_000)
def _iso_one(ctx, spec, p):
    _need_budget(spec)
    c = _iso_common(ctx, p)
    row = iso_one_check(ctx.kernel, _alpha(ctx, p), c["rho"], c["phi"], _blocks_from(ctx, p["blocks"]), c["F"],
                        spec.budget, ctx.seed, ctx.config.epsilon, ctx.threads, int(p["chunk"]), spec.name)
    return [row]


@register("iso_two", MONTE_CARLO, rho=0, phi=0, n=2, nu=0, F="lorentz", alpha=None, chunk=50_000)
def _iso_two(ctx, spec, p):
    _need_budget(spec)
    c = _iso_common(ctx, p)
    row = iso_two_check(ctx.kernel, _alpha(ctx, p), c["rho"], c["phi"], int(p["n"]), ctx.nu(p["nu"]), c["F"],
                        spec.budget, ctx.seed, ctx.config.epsilon, ctx.threads, int(p["chunk"]), spec.name)
    return [row]


def _functionals(ctx):
    k = ctx.kernel
    m = k.num_states
    return [chaos.SoupFunctional.occupation(k, 0), chaos.SoupFunctional.occupation(k, (1 % m)),
            chaos.SoupFunctional.renormalized(k, 0, 2)]


@register("chaos_mean", MONTE_CARLO, n_max=3, alpha=None)
def _chaos_mean(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    gs = _functionals(ctx)
    top = int(p["n_max"])

    def task(rng, size):
        batch = sample_soup_batch(measure, a, size, rng)
        return {n: chaos.I_n(batch, gs[:n]) for n in range(1, top + 1)}

    est = _sharded(ctx, spec, task, _need_budget(spec))
    return [estimate_row(f"E[I_{n}]", est[n], 0.0) for n in range(1, top + 1)]


@register("chaos_orthogonality", MONTE_CARLO, n_max=3, alpha=None)
def _chaos_orthogonality(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    k = ctx.kernel
    m = k.num_states
    g = _functionals(ctx)
    gs, fs = [g[0], g[1], g[0]], [g[1], g[1], g[0]]
    top = int(p["n_max"])
    y = 1 % m

    def task(rng, size):
        batch = sample_soup_batch(measure, a, size, rng)
        I = {n: chaos.I_n(batch, gs[:n]) for n in range(1, top + 1)}
        J = {n: chaos.I_n(batch, fs[:n]) for n in range(1, top + 1)}
        out = {(n, j): I[n] * J[j] for n in range(1, top + 1) for j in range(1, top + 1)}
        out["I11"] = renorm.I_ll_chaos(batch, measure, (1, 1), 0) * renorm.I_ll_chaos(batch, measure, (1, 1), y)
        return out

    est = _sharded(ctx, spec, task, _need_budget(spec))
    rows = []
    for n in range(1, top + 1):
        for j in range(1, top + 1):
            exact = moments.wick_covariance(a, gs[:n], fs[:j])
            rows.append(estimate_row(f"E[I_{n}(g) I_{j}(f)]", est[(n, j)], exact))
    rows.append(estimate_row(f"E[I_11(0) I_11({y})]", est["I11"],
                             moments.I_ll_covariance(k, a, (1, 1), (1, 1), 0, y)))
    return rows


def _bounded_site_functionals(k):
    return [chaos.SoupFunctional.on_site(k, 0, lambda t: 0.5 * np.tanh(t), "0.5 tanh"),
            chaos.SoupFunctional.on_site(k, 0, lambda t: -0.3 * (1 - np.exp(-t)), "-0.3(1-e^-t)"),
            chaos.SoupFunctional.on_site(k, 0, lambda t: 0.4 * t * np.exp(-t), "0.4 t e^-t")]


@register("exp_chaos_mean", MONTE_CARLO, alpha=None)
def _exp_chaos_mean(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    hs = _bounded_site_functionals(ctx.kernel)

    def task(rng, size):
        batch = sample_soup_batch(measure, a, size, rng)
        return {h.label: chaos.exp_chaos(batch, h) for h in hs}

    est = _sharded(ctx, spec, task, _need_budget(spec))
    return [estimate_row(f"E[E({h.label})]", est[h.label], 1.0) for h in hs]


@register("multi_exp", MONTE_CARLO, alpha=None)
def _multi_exp(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    hs = _bounded_site_functionals(ctx.kernel)

    def task(rng, size):
        batch = sample_soup_batch(measure, a, size, rng)
        e = [chaos.exp_chaos(batch, h) for h in hs]
        return {2: e[0] * e[1], 3: e[0] * e[1] * e[2]}

    est = _sharded(ctx, spec, task, _need_budget(spec))
    return [estimate_row(f"E[prod of {N} exponential chaoses]", est[N], moments.multi_exp_moment(a, hs[:N]))
            for N in (2, 3)]


def _replicate(batch: SoupBatch, n: int) -> SoupBatch:
    """n copies of a single soup."""
    L = batch.occ.shape[0]
    return SoupBatch(n, np.repeat(np.arange(n), L), np.tile(batch.occ, (n, 1)), batch.alpha, batch.epsilon,
                     batch.kernel)


@register("martingale", MONTE_CARLO, alpha=None, alpha_ext=0.5, n=2)
def _martingale(ctx, spec, p):
    measure = ctx.loop_measure()
    a, a2 = _alpha(ctx, p), float(p["alpha_ext"])
    gs = _functionals(ctx)[: int(p["n"])]
    base = sample_soup_batch(measure, a, 1, ctx.rng(spec.name + "/base"))
    target = float(chaos.I_n(base, gs)[0])

    def task(rng, size):
        ext = sample_soup_batch(measure, a2, size, rng)
        pair = chaos.CoupledSoupPair(_replicate(base, size), ext)
        return {"v": chaos.I_n(pair.combined, gs, a + a2)}

    est = _sharded(ctx, spec, task, _need_budget(spec))["v"]
    return [estimate_row(f"E[I_{len(gs)} at alpha+alpha' | base soup]", est, target, base_loops=int(base.occ.shape[0]))]


@register("theta_mean", MONTE_CARLO, pairs=[[0, 0], [0, 1], [1, 1]], alpha=None)
def _theta_mean(ctx, spec, p):
    measure = ctx.loop_measure()
    a = _alpha(ctx, p)
    pairs = [(ctx.positive(r), ctx.positive(f)) for r, f in p["pairs"]]

    def task(rng, size):
        batch = sample_soup_batch(measure, a, size, rng)
        occ = measure.sample_normalized(size, rng)
        out = {}
        for i, (r, f) in enumerate(pairs):
            out[("soup", i)] = theta_values(batch, r, f)
            out[("loop", i)] = extra_loop_weights(measure, occ, r, f)
        return out

    est = _sharded(ctx, spec, task, _need_budget(spec))
    rows = []
    for i, (r, f) in enumerate(pairs):
        exact = moments.theta_mean(ctx.kernel, a, r, f)
        # mu_eps omits trivial loops shorter than epsilon: subtract that sliver from the target
        gap = sum(r.weights[x] * f.weights[x] * measure.truncation_gap(x, 2) for x in range(measure.m))
        tag = f"{list(r.support())},{list(f.support())}"
        rows.append(estimate_row(f"E[theta] ({tag})", est[("soup", i)], exact - a * gap))
        rows.append(estimate_row(f"weighted extra loop ({tag})", est[("loop", i)], exact / a - gap))
    return rows


# ================================================================ runner

def kinds(mode: str | None = None) -> list[str]:
    return sorted(k for k, v in REGISTRY.items() if mode is None or v.mode == mode)


def resolve_params(spec: CheckSpec) -> dict:
    if spec.kind not in REGISTRY:
        raise ConfigError(f"unknown check kind {spec.kind!r}; known kinds: {', '.join(kinds())}")
    kind = REGISTRY[spec.kind]
    unknown = set(spec.params) - set(kind.defaults)
    if unknown:
        raise ConfigError(f"check {spec.name!r}: unknown parameters {sorted(unknown)}")
    return {**kind.defaults, **spec.params}


def validate(config: Config) -> None:
    names = set()
    for spec in config.checks:
        resolve_params(spec)
        if spec.name in names:
            raise ConfigError(f"duplicate check name {spec.name!r}")
        names.add(spec.name)
    if config.rates is not None:
        try:
            build_kernel(config.rates)
        except ValueError as exc:
            raise ConfigError(f"bad rate matrix: {exc}") from exc


def _error_row(spec: CheckSpec, exc: Exception) -> ComparisonRow:
    return ComparisonRow(spec.name, "error", False, detail={"error": type(exc).__name__, "message": str(exc)})


def run_check(ctx: Context, spec: CheckSpec) -> list[ComparisonRow]:
    params = resolve_params(spec)
    t0 = time.perf_counter()
    try:
        rows = REGISTRY[spec.kind].fn(ctx, spec, params)
    except ConfigError:
        raise
    except (LoopSoupError, ValueError, ArithmeticError) as exc:
        return [_error_row(spec, exc)]
    elapsed = time.perf_counter() - t0
    for row in rows:
        if not row.name.startswith(spec.name):
            row.name = f"{spec.name}: {row.name}"
        if elapsed > spec.max_seconds:
            row.passed = False
            row.detail["over_time"] = True
    return rows


def run_suite(config: Config, mode: str | None = None, seed: int | None = None,
              threads: int | None = None) -> list[ComparisonRow]:
    """Run the configured checks of the given mode (all modes when None) in config order."""
    validate(config)
    ctx = Context(config, config.seed if seed is None else int(seed), config.threads if threads is None else threads)
    rows: list[ComparisonRow] = []
    for spec in config.checks:
        if mode is not None and REGISTRY[spec.kind].mode != mode:
            continue
        rows.extend(run_check(ctx, spec))
    return rows


def pass_fraction(rows: list[ComparisonRow]) -> float:
    return sum(r.passed for r in rows) / len(rows) if rows else 1.0


def summarize(rows: list[ComparisonRow]) -> dict[str, Any]:
    return {
        "rows": len(rows),
        "passed": sum(r.passed for r in rows),
        "failed": sum(not r.passed for r in rows),
        "errors": sum(r.kind == "error" for r in rows),
        "pass_fraction": round(pass_fraction(rows), 6),
        "z_threshold": Z_THRESHOLD,
    }


# ================================================================ radial suite

DEFAULT_GRID = (1e-2, 1e5, 64)


def _band_row(table, kind: str = "band", **detail) -> ComparisonRow:
    ratio = table.ratio
    info = {"min_ratio": float(ratio.min()), "max_ratio": float(ratio.max()), "spread": table.spread, **detail}
    if table.band is not None:
        info["band"] = list(table.band)
    if table.spread_limit is not None:
        info["spread_limit"] = table.spread_limit
    return ComparisonRow(table.name, kind, table.passed, estimate=float(np.median(ratio)),
                         residual=table.spread, samples=len(ratio), detail=info)


def _csv_name(i: int, name: str) -> str:
    return f"case{i}_" + "".join(ch if ch.isalnum() else "_" for ch in name).strip("_") + ".csv"


def run_radial(config: Config, csv_dir=None) -> tuple[list[ComparisonRow], list[str]]:
    """Slope, band and chain-growth rows for every configured radial case."""
    from pathlib import Path

    from . import radial

    rows: list[ComparisonRow] = []
    notes: list[str] = []
    for i, case in enumerate(config.radial):
        radial._check_dim(case.d)
    for i, case in enumerate(config.radial):
        t0 = time.perf_counter()
        d, a = case.d, case.alpha
        if case.grid is None:
            grid = radial.RadialGrid(*DEFAULT_GRID)
            notes.append(f"case {i}: no grid given, using r in [{DEFAULT_GRID[0]:g}, {DEFAULT_GRID[1]:g}] "
                         f"at {DEFAULT_GRID[2]} points per decade")
        else:
            grid = radial.RadialGrid(case.grid.r_min, case.grid.r_max, case.grid.per_decade)
        pts = grid.points
        lo, hi = case.window
        if lo < pts[0] or hi > pts[-1]:
            raise ConfigError(f"case {i}: slope window {case.window} is outside the grid")
        make = radial.power_law if case.shape == "power" else radial.shifted_power
        h = make(a, d)
        top = pts[pts >= pts[-1] / 100.0]
        tag = f"case {i} d={d} {h.label}"
        tables = []
        try:
            thetas = {}
            for k in range(2, case.k_max + 1):
                if not d * (1 - 1 / k) < a <= d:
                    notes.append(f"{tag}: k={k} skipped, needs d(1-1/k) < alpha <= d")
                    continue
                thetas[k] = radial.theta_k(h, d, k, grid)
                if case.shape == "power":
                    fit = radial.rv_index(thetas[k], case.window)
                    want = -(k * a - (k - 1) * d)
                    rows.append(ComparisonRow(f"{tag}: slope of theta_{k}", "slope",
                                              abs(fit.slope - want) <= case.slope_tol, exact=want,
                                              estimate=fit.slope, stderr=fit.stderr,
                                              residual=abs(fit.slope - want), samples=fit.points,
                                              detail={"tolerance": case.slope_tol, "window": list(case.window)}))
                tables.append(radial.theta_ratio_check(h, d, k, thetas[k], top, case.band))
            if a < d:
                tables.append(radial.ball_growth_check(h, d, top, case.spread_limit))
            else:
                notes.append(f"{tag}: ball growth band needs alpha < d, skipped")
            beta = a if case.beta is None else case.beta
            if a + beta > d and max(a, beta) <= d and h.controllable:
                tables.append(radial.two_term_check(h, make(beta, d), d, top, case.band))
            rs = np.geomspace(case.chain_r[0], case.chain_r[1], case.chain_points)
            for k in range(1, case.k_max + 1):
                if k >= 2 and k not in thetas:
                    continue
                tables.append(radial.chain_growth_check(h, d, k, rs, thetas.get(k), case.band))
        except LoopSoupError as exc:
            elapsed = time.perf_counter() - t0
            rows.append(ComparisonRow(tag, "error", False, detail={"error": type(exc).__name__, "message": str(exc)}))
            continue
        elapsed = time.perf_counter() - t0
        for t in tables:
            t.name = f"case {i}: {t.name}"
            rows.append(_band_row(t))
            if csv_dir is not None:
                Path(csv_dir).mkdir(parents=True, exist_ok=True)
                radial.write_csv(Path(csv_dir) / _csv_name(i, t.name), t)
        for r in rows:
            if r.name.startswith(f"case {i}") and not r.seconds:
                r.seconds = elapsed
    return rows, notes
