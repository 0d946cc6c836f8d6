"""Closed-form joint moments as sums over constrained permutation families.

Every family member contributes a product of Green values along block
transitions, so members are first aggregated by their block-transition count
matrix (and cycle count), then the state sums are done once per pattern.
Passing a sympy Symbol as ``alpha`` returns the moment as a polynomial in alpha.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from functools import lru_cache
from typing import Sequence

import numpy as np

from .chaos import SoupFunctional, product
from .combinatorics import (
    BlockLayout,
    alternating_cycle_perms,
    alternating_maps,
    cycle_count,
    separated_partitions,
    set_partitions,
    windows_from_sizes,
)
from .errors import EnumerationBudget
from .kernel import MarkovKernel
from .loops import OccupationPolynomial, mu_expectation, mu_moment
from .renorm import PointMeasure, as_measure, build_B

MAX_ORDER = 12

Blocks = Sequence[tuple[int, object]]


def _split(kernel: MarkovKernel, blocks: Blocks) -> tuple[BlockLayout, list[PointMeasure]]:
    sizes = tuple(int(n) for n, _ in blocks)
    if sum(sizes) > MAX_ORDER:
        raise EnumerationBudget(f"total order {sum(sizes)} exceeds the enumeration budget {MAX_ORDER}")
    nus = [as_measure(nu, kernel.num_states) for _, nu in blocks]
    return BlockLayout(sizes), nus


@lru_cache(maxsize=512)
def _map_patterns(sizes: tuple[int, ...]) -> tuple:
    k = len(sizes)
    cnt: Counter = Counter()
    for seq in alternating_maps(sizes):
        T = [0] * (k * k)
        for j in range(len(seq)):
            T[seq[j] * k + seq[(j + 1) % len(seq)]] += 1
        cnt[tuple(T)] += 1
    return tuple(cnt.items())


@lru_cache(maxsize=512)
def _perm_patterns(sizes: tuple[int, ...], same_cycle: bool) -> tuple:
    k = len(sizes)
    blk = BlockLayout(sizes).block_of()
    cnt: Counter = Counter()
    for pi in alternating_cycle_perms(sizes, same_cycle):
        T = [0] * (k * k)
        for j, v in enumerate(pi):
            T[blk[j] * k + blk[v]] += 1
        cnt[(tuple(T), cycle_count(pi))] += 1
    return tuple(cnt.items())


def _state_sum(u: np.ndarray, T: tuple[int, ...], nus: list[PointMeasure]) -> float:
    k = len(nus)
    supports = [nu.support() for nu in nus]
    tot = 0.0
    for xs in itertools.product(*supports):
        w = 1.0
        for b, x in enumerate(xs):
            w *= nus[b].weights[x]
        for a in range(k):
            for b in range(k):
                t = T[a * k + b]
                if t:
                    w *= u[xs[a], xs[b]] ** t
        tot += w
    return tot


def mu_joint_L(kernel: MarkovKernel, blocks: Blocks) -> float:
    """mu(prod_i L_{n_i}(nu_i)) as (prod n_i!)/n times a sum over alternating maps."""
    layout, nus = _split(kernel, blocks)
    if layout.k < 2:
        raise ValueError("need at least two blocks")
    pre = math.prod(math.factorial(s) for s in layout.sizes) / layout.n
    u = kernel.green
    return pre * sum(c * _state_sum(u, T, nus) for T, c in _map_patterns(layout.sizes))


def _soup_moment(kernel, alpha, blocks, same_cycle: bool):
    layout, nus = _split(kernel, blocks)
    if layout.k < 2:
        return 0.0
    u = kernel.green
    tot = 0
    cache: dict = {}
    for (T, c), count in _perm_patterns(layout.sizes, same_cycle):
        if T not in cache:
            cache[T] = _state_sum(u, T, nus)
        tot = tot + count * alpha**c * cache[T]
    return tot


def soup_joint_psi(kernel: MarkovKernel, alpha, blocks: Blocks):
    """E[prod_i psi_{n_i}(nu_i)]: alternating permutations, each block inside one cycle."""
    return _soup_moment(kernel, alpha, blocks, True)


def soup_joint_psitilde(kernel: MarkovKernel, alpha, blocks: Blocks):
    """E[prod_i psi~_{n_i}(nu_i)]: alternating permutations without the cycle condition."""
    return _soup_moment(kernel, alpha, blocks, False)


def partition_moment(kernel: MarkovKernel, alpha, blocks: Blocks):
    """sum over set partitions of the blocks into parts of size >= 2 of prod alpha mu_joint_L(part)."""
    blocks = list(blocks)
    tot = 0
    for part in set_partitions(len(blocks)):
        if any(len(b) < 2 for b in part):
            continue
        term = 1
        for b in part:
            term = term * alpha * mu_joint_L(kernel, [blocks[i] for i in b])
        tot = tot + term
    return tot


def expand_mu_B_product(kernel: MarkovKernel, blocks: Blocks, with_scale: bool = False):
    """mu(prod_i B_{n_i}(L)(nu_i)) by expanding the polynomials and using mu_moment termwise.

    With ``with_scale`` also returns sum |coefficient * moment|, the size of the
    cancellation, so callers can judge round-off on values that vanish exactly.
    """
    m = kernel.num_states
    poly = OccupationPolynomial(m, {(0,) * m: 1})
    for n, nu in blocks:
        nu = as_measure(nu, m)
        factor = OccupationPolynomial(m)
        for x in nu.support():
            b = build_B(float(kernel.green[x, x]), n)
            factor = factor + OccupationPolynomial.univariate(m, x, [float(c) for c in b.coeffs]) * nu.weights[x]
        poly = poly * factor
    val = mu_expectation(kernel, poly)
    if not with_scale:
        return val
    scale = sum(abs(c) * mu_moment(kernel, [x for x, p in enumerate(e) for _ in range(p)])
                for e, c in poly.terms.items())
    return val, scale


def wick_moment_constant(alpha, n: int):
    """K(alpha, n) = n! alpha (alpha+1) ... (alpha+n-1)."""
    out = math.factorial(n)
    for i in range(n):
        out = out * (alpha + i)
    return out


def wick_pair_value(kernel: MarkovKernel, alpha, n: int, nu, nu2) -> float:
    """K(alpha, n) sum_{x,y} (u(x,y) u(y,x))^n nu(x) nu'(y)."""
    m = kernel.num_states
    a, b = as_measure(nu, m).array, as_measure(nu2, m).array
    u = kernel.green
    return wick_moment_constant(alpha, n) * float(a @ ((u * u.T) ** n) @ b)


# ---------------------------------------------------------------- Poisson sums

def poisson_joint_phi(alpha, sizes: Sequence[int], gs: Sequence[SoupFunctional], min_block: int = 1) -> float:
    """E[prod_m phi_{n_m}(window m)] (min_block=1), or the min_block=2 variant used for Wick products."""
    if sum(sizes) != len(gs):
        raise ValueError("window sizes must add up to the number of functionals")
    tot = 0.0
    for part in separated_partitions(len(gs), windows_from_sizes(sizes), min_block):
        term = 1.0
        for b in part:
            term *= alpha * product([gs[i] for i in b]).mu
        tot += term
    return tot


def wick_covariance(alpha, gs: Sequence[SoupFunctional], fs: Sequence[SoupFunctional]) -> float:
    """E[I_n(g) I_m(f)] = delta_{nm} sum over bijections of prod alpha mu(g_j f_pi(j))."""
    if len(gs) != len(fs):
        return 0.0
    n = len(gs)
    pair = [[(g * f).mu for f in fs] for g in gs]
    tot = 0.0
    for pi in itertools.permutations(range(n)):
        term = 1.0
        for j in range(n):
            term *= alpha * pair[j][pi[j]]
        tot += term
    return tot


def multi_exp_moment(alpha, hs: Sequence[SoupFunctional]) -> float:
    """E[prod_m E(h_m)] = exp(sum over subsets B with |B| >= 2 of alpha mu(prod_{m in B} h_m))."""
    tot = 0.0
    for r in range(2, len(hs) + 1):
        for B in itertools.combinations(range(len(hs)), r):
            tot += alpha * product([hs[i] for i in B]).mu
    return math.exp(tot)


def I_ll_covariance(kernel: MarkovKernel, alpha, ells: Sequence[int], ells2: Sequence[int], nu, nu2) -> float:
    """E[I_l(nu) I_l'(nu')] with exact pair values mu(L_l(x) L_l'(y))."""
    if len(ells) != len(ells2):
        return 0.0
    m = kernel.num_states
    a, b = as_measure(nu, m), as_measure(nu2, m)
    tot = 0.0
    for x in a.support():
        gx = [SoupFunctional.renormalized(kernel, x, l) for l in ells]
        for y in b.support():
            fy = [SoupFunctional.renormalized(kernel, y, l) for l in ells2]
            tot += a.weights[x] * b.weights[y] * wick_covariance(alpha, gx, fy)
    return tot


def theta_mean(kernel: MarkovKernel, alpha, rho, phi) -> float:
    """E[theta^{rho,phi}] = alpha sum_{x,y} rho(x) phi(y) u(x,y) u(y,x)."""
    m = kernel.num_states
    r, p = as_measure(rho, m), as_measure(phi, m)
    if np.any(r.array < 0) or np.any(p.array < 0):
        raise ValueError("rho and phi must be positive measures")
    u = kernel.green
    return alpha * float(r.array @ (u * u.T) @ p.array)
