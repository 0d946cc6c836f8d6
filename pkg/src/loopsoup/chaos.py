"""Poisson chaos over loop soups.

phi_n sums a product of per-loop values over ordered tuples of distinct loops.
It is computed from per-soup power sums by Moebius inversion over set
partitions: phi_n = sum_pi prod_B (-1)^{|B|-1} (|B|-1)! S(prod_{j in B} g_j).
The literal tuple sum is kept for small soups as an independent route.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .combinatorics import separated_partitions, set_partitions, windows_from_sizes
from .errors import InfiniteMass
from .kernel import MarkovKernel
from .loops import OccupationPolynomial, SoupBatch, mu_expectation, mu_single_site


class SoupFunctional:
    """A per-loop function g(omega) = f(occupation vector) with its exact mu-mean."""

    def __init__(self, evaluate: Callable[[np.ndarray], np.ndarray], mu: float | None,
                 label: str = "g", poly: OccupationPolynomial | None = None, site=None,
                 kernel: MarkovKernel | None = None):
        self._evaluate = evaluate
        self._mu = mu
        self.label = label
        self.poly = poly
        self.site = site  # (x, scalar f) for single-site functionals
        self.kernel = kernel

    @classmethod
    def from_poly(cls, kernel: MarkovKernel, poly: OccupationPolynomial, label: str | None = None):
        return cls(poly.evaluate, float(mu_expectation(kernel, poly)), label or repr(poly), poly,
                   kernel=kernel)

    @classmethod
    def occupation(cls, kernel: MarkovKernel, x: int, scale: float = 1.0):
        poly = OccupationPolynomial.occupation(kernel.num_states, x) * scale
        return cls.from_poly(kernel, poly, f"{scale}*L{x}")

    @classmethod
    def on_site(cls, kernel: MarkovKernel, x: int, f: Callable, label: str | None = None):
        """g(omega) = f(L(x)(omega)) for a scalar f with f(0) = 0."""
        if f(0.0) != 0:
            raise InfiniteMass("a single-site functional must vanish at zero occupation")
        return cls(lambda occ: f(np.asarray(occ)[:, x]), mu_single_site(kernel, x, f),
                   label or f"f(L{x})", site=(x, f), kernel=kernel)

    @classmethod
    def renormalized(cls, kernel: MarkovKernel, x: int, n: int):
        """L_n(x) = B_n(L(x)) on a single loop."""
        from .renorm import build_B

        b = build_B(float(kernel.green[x, x]), n)
        poly = OccupationPolynomial.univariate(kernel.num_states, x, [float(c) for c in b.coeffs])
        return cls(poly.evaluate, float(b.mu_value()), f"L{n}({x})", poly, kernel=kernel)

    @property
    def mu(self) -> float:
        if self._mu is None:
            raise ValueError(f"no exact mu-mean is available for {self.label}")
        return self._mu

    def values(self, batch: SoupBatch) -> np.ndarray:
        return np.asarray(self._evaluate(batch.occ), dtype=float).reshape(-1)

    def __mul__(self, other: "SoupFunctional") -> "SoupFunctional":
        ev = lambda occ, a=self._evaluate, b=other._evaluate: a(occ) * b(occ)
        label = f"({self.label})*({other.label})"
        kernel = self.kernel or other.kernel
        if self.poly is not None and other.poly is not None:
            poly = self.poly * other.poly
            return SoupFunctional(poly.evaluate, float(mu_expectation(kernel, poly)), label, poly,
                                  kernel=kernel)
        if self.site is not None and other.site is not None and self.site[0] == other.site[0]:
            x, f, g = self.site[0], self.site[1], other.site[1]
            h = lambda t: f(t) * g(t)
            return SoupFunctional(ev, mu_single_site(kernel, x, h), label, site=(x, h), kernel=kernel)
        return SoupFunctional(ev, None, label, kernel=kernel)


def product(gs: Sequence[SoupFunctional]) -> SoupFunctional:
    out = gs[0]
    for g in gs[1:]:
        out = out * g
    return out


def _as_values(batch: SoupBatch, g) -> np.ndarray:
    if isinstance(g, SoupFunctional):
        return g.values(batch)
    return np.asarray(g, dtype=float)


def _mu_of(g, mu):
    if mu is not None:
        return mu
    return g.mu


# ---------------------------------------------------------------- phi_n

class _BlockSums:
    """Per-soup sums of products over index subsets, cached by bitmask."""

    def __init__(self, batch: SoupBatch, vals: list[np.ndarray]):
        self.batch = batch
        self.vals = vals
        self.cache: dict[int, np.ndarray] = {}
        self.prod: dict[int, np.ndarray] = {}

    def loop_product(self, mask: int) -> np.ndarray:
        if mask in self.prod:
            return self.prod[mask]
        low = mask & -mask
        j = low.bit_length() - 1
        rest = mask ^ low
        out = self.vals[j] if rest == 0 else self.vals[j] * self.loop_product(rest)
        self.prod[mask] = out
        return out

    def block(self, mask: int) -> np.ndarray:
        if mask not in self.cache:
            self.cache[mask] = self.batch.per_soup_sum(self.loop_product(mask))
        return self.cache[mask]

    def phi(self, idx: Sequence[int]) -> np.ndarray:
        idx = list(idx)
        out = np.zeros(self.batch.n_soups)
        if not idx:
            return out + 1.0
        for part in set_partitions(len(idx)):
            term = np.ones(self.batch.n_soups)
            coef = 1
            for b in part:
                coef *= (-1) ** (len(b) - 1) * math.factorial(len(b) - 1)
                term = term * self.block(sum(1 << idx[i] for i in b))
            out += coef * term
        return out


def phi_n(batch: SoupBatch, gs: Sequence) -> np.ndarray:
    """Per-soup sum over ordered tuples of distinct loops of prod_j g_j."""
    vals = [_as_values(batch, g) for g in gs]
    return _BlockSums(batch, vals).phi(range(len(vals)))


def phi_n_literal(loop_values: Sequence[np.ndarray]) -> float:
    """The same sum for one soup by direct enumeration; loop_values[j][i] = g_j(omega_i)."""
    n = len(loop_values)
    if n == 0:
        return 1.0
    size = len(loop_values[0])
    tot = 0.0
    for tup in itertools.permutations(range(size), n):
        p = 1.0
        for j, i in enumerate(tup):
            p *= loop_values[j][i]
        tot += p
    return tot


def phi_power(batch: SoupBatch, g, top: int) -> np.ndarray:
    """phi_k(g, ..., g) for k = 0..top as an (n_soups, top+1) array, via Newton's identities."""
    v = _as_values(batch, g)
    p = np.zeros((batch.n_soups, top + 1))
    pw = np.ones_like(v)
    for k in range(1, top + 1):
        pw = pw * v
        p[:, k] = batch.per_soup_sum(pw)
    e = np.zeros_like(p)
    e[:, 0] = 1.0
    for k in range(1, top + 1):
        acc = np.zeros(batch.n_soups)
        for i in range(1, k + 1):
            acc += (-1) ** (i - 1) * e[:, k - i] * p[:, i]
        e[:, k] = acc / k
    return e * np.array([float(math.factorial(k)) for k in range(top + 1)])


# ---------------------------------------------------------------- Wick products

def I_n(batch: SoupBatch, gs: Sequence, alpha: float | None = None, mus: Sequence[float] | None = None,
        _sums: _BlockSums | None = None) -> np.ndarray:
    """Poisson Wick product: sum_D (-1)^{|D^c|} phi_{|D|}(g_D) prod_{j not in D} alpha mu(g_j)."""
    n = len(gs)
    alpha = batch.alpha if alpha is None else alpha
    mus = [_mu_of(g, None if mus is None else mus[j]) for j, g in enumerate(gs)]
    sums = _sums or _BlockSums(batch, [_as_values(batch, g) for g in gs])
    return _sub_I(batch, sums, range(n), mus, alpha)


def I_power(batch: SoupBatch, g, top: int, alpha: float | None = None, mu: float | None = None) -> np.ndarray:
    """I_k(g, ..., g) for k = 0..top, shape (n_soups, top+1)."""
    alpha = batch.alpha if alpha is None else alpha
    am = alpha * _mu_of(g, mu)
    phi = phi_power(batch, g, top)
    out = np.zeros_like(phi)
    for k in range(top + 1):
        for j in range(k + 1):
            out[:, k] += math.comb(k, j) * (-am) ** (k - j) * phi[:, j]
    return out


def exp_chaos(batch: SoupBatch, g, alpha: float | None = None, mu: float | None = None) -> np.ndarray:
    """prod over loops of (1 + g(omega)) times exp(-alpha mu(g)), per soup."""
    alpha = batch.alpha if alpha is None else alpha
    v = _as_values(batch, g)
    one = 1.0 + v
    logabs = batch.per_soup_sum(np.log(np.abs(np.where(one == 0, 1.0, one))))
    neg = batch.per_soup_sum((one < 0).astype(float))
    zero = batch.per_soup_sum((one == 0).astype(float))
    sign = np.where(np.mod(neg, 2) == 1, -1.0, 1.0)
    out = sign * np.exp(logabs - alpha * _mu_of(g, mu))
    return np.where(zero > 0, 0.0, out)


def exp_chaos_series(batch: SoupBatch, g, top: int, alpha: float | None = None,
                     mu: float | None = None) -> np.ndarray:
    """Partial sum sum_{n <= top} I_n(g, ..., g)/n!."""
    ip = I_power(batch, g, top, alpha, mu)
    return (ip / np.array([float(math.factorial(k)) for k in range(top + 1)])).sum(axis=1)


# ---------------------------------------------------------------- product identities

def wick_expand(batch: SoupBatch, sizes: Sequence[int], gs: Sequence) -> np.ndarray:
    """Residual of prod_m phi_{n_m}(window m) minus the sum over separated partitions."""
    vals = [_as_values(batch, g) for g in gs]
    if sum(sizes) != len(vals):
        raise ValueError("window sizes must add up to the number of functionals")
    sums = _BlockSums(batch, vals)
    lhs = np.ones(batch.n_soups)
    for win in windows_from_sizes(sizes):
        lhs = lhs * sums.phi(win)
    rhs = np.zeros(batch.n_soups)
    for part in separated_partitions(len(vals), windows_from_sizes(sizes)):
        merged = [np.prod([vals[i] for i in b], axis=0) for b in part]
        rhs += _BlockSums(batch, merged).phi(range(len(merged)))
    return lhs - rhs


@dataclass
class CoupledSoupPair:
    """A soup at intensity alpha plus an independent extension at alpha'."""

    base: SoupBatch
    extension: SoupBatch

    def __post_init__(self):
        if self.base.n_soups != self.extension.n_soups:
            raise ValueError("base and extension must hold the same number of soups")

    @property
    def combined(self) -> SoupBatch:
        return self.base.union(self.extension)


def martingale_decompose(pair: CoupledSoupPair, gs: Sequence, mus: Sequence[float] | None = None) -> np.ndarray:
    """Residual of I_n at alpha + alpha' against sum_A I^{(alpha)}_A times I^{(alpha')}_{A^c}."""
    n = len(gs)
    mus = [_mu_of(g, None if mus is None else mus[j]) for j, g in enumerate(gs)]
    a, a2 = pair.base.alpha, pair.extension.alpha
    full = I_n(pair.combined, gs, a + a2, mus)
    base_sums = _BlockSums(pair.base, [_as_values(pair.base, g) for g in gs])
    ext_sums = _BlockSums(pair.extension, [_as_values(pair.extension, g) for g in gs])
    rhs = np.zeros(pair.base.n_soups)
    for r in range(n + 1):
        for A in itertools.combinations(range(n), r):
            Ac = [j for j in range(n) if j not in A]
            left = _sub_I(pair.base, base_sums, A, mus, a)
            right = _sub_I(pair.extension, ext_sums, Ac, mus, a2)
            rhs += left * right
    return full - rhs


def _sub_I(batch, sums: _BlockSums, idx, mus, alpha) -> np.ndarray:
    idx = list(idx)
    out = np.zeros(batch.n_soups)
    for r in range(len(idx) + 1):
        for D in itertools.combinations(idx, r):
            comp = [j for j in idx if j not in D]
            c = (-1) ** len(comp)
            for j in comp:
                c *= alpha * mus[j]
            out += c * sums.phi(D)
    return out
