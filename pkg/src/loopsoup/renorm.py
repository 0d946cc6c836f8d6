"""Renormalization polynomials B_n (intersection local time) and A_n (Wick power).

Both come from the chain/circuit recursion evaluated at a point mass, where
every chain value ch_i and circuit value ci_j collapses to c^i with c = u(x,x).
Coefficients stay exact (Fraction) whenever c and alpha are rational.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from numbers import Rational
from typing import Sequence

import numpy as np

from .combinatorics import sigma_indices
from .kernel import MarkovKernel
from .loops import BasedLoop, LoopMeasure, LoopSoup, SoupBatch, check_kernel


def _exact(v):
    return Fraction(v) if isinstance(v, (int, Rational)) and not isinstance(v, bool) else v


# ---------------------------------------------------------------- polynomial helpers

def _padd(a, b):
    n = max(len(a), len(b))
    return [(a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) for i in range(n)]


def _pscale(a, s):
    return [s * v for v in a]


def _pmul(a, b):
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] = out[i + j] + x * y
    return out


def poly_eval(coeffs: Sequence, v):
    """Horner evaluation; ``v`` may be a scalar or a numpy array."""
    out = 0
    for c in reversed(coeffs):
        out = out * v + (float(c) if isinstance(v, np.ndarray) else c)
    return out


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class ChainCircuitTable:
    """Point-mass chain and circuit values: ch_i(x) = ci_i(x) = u(x,x)^i."""

    c: np.ndarray

    @classmethod
    def from_kernel(cls, kernel: MarkovKernel) -> "ChainCircuitTable":
        return cls(np.diag(kernel.green).copy())

    def ch(self, i: int, x: int) -> float:
        return float(self.c[x] ** i)

    def ci(self, j: int, x: int) -> float:
        return float(self.c[x] ** j)


@dataclass(frozen=True)
class RenormPolynomial:
    kind: str
    n: int
    coeffs: tuple
    c: object
    alpha: object = None

    def __call__(self, v):
        return poly_eval(self.coeffs, v)

    def mu_value(self):
        """mu(P(L(x))) at a point with u(x,x) = c, via mu(L^j) = (j-1)! c^j."""
        if self.coeffs[0] != 0:
            raise ValueError("polynomial has a constant term")
        return sum(a * math.factorial(j - 1) * self.c**j for j, a in enumerate(self.coeffs) if j)


@dataclass(frozen=True)
class PointMeasure:
    weights: tuple[float, ...]
    positive: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("point measure weights must be finite")
        if self.positive and np.any(w < 0):
            raise ValueError("measure flagged positive has a negative weight")

    @classmethod
    def delta(cls, m: int, x: int) -> "PointMeasure":
        w = [0.0] * m
        w[x] = 1.0
        return cls(tuple(w), True)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def support(self) -> list[int]:
        return [x for x, w in enumerate(self.weights) if w != 0]


def as_measure(nu, m: int | None = None) -> PointMeasure:
    if isinstance(nu, PointMeasure):
        return nu
    if isinstance(nu, (int, np.integer)):
        return PointMeasure.delta(m, int(nu))
    return PointMeasure(tuple(float(v) for v in nu))


# ---------------------------------------------------------------- recursions

def _recursion(n: int, c, alpha, circuits: bool) -> list[list]:
    """Coefficient lists P_0..P_n of the renormalized powers."""
    polys: list[list] = [[1]]
    for k in range(1, n + 1):
        cur = [0] * k + [1]
        for s in sigma_indices(k, circuits):
            if s.num_chains == 0 and not circuits:
                continue
            w = Fraction(math.factorial(k), math.factorial(k - s.size_plus))
            for kk in s.chains:
                w /= math.factorial(kk)
            factor = w
            for i, kk in enumerate(s.chains, 1):
                factor = factor * c ** (i * kk)
            for j, mj in s.circuits:
                factor = factor * (alpha * c**j / j) ** mj / math.factorial(mj)
            cur = _padd(cur, _pscale(polys[k - s.size], -factor))
        polys.append(cur)
    return polys


@lru_cache(maxsize=256)
def _b_table(n: int, c) -> tuple:
    return tuple(tuple(p) for p in _recursion(n, c, None, circuits=False))


@lru_cache(maxsize=256)
def _a_table(n: int, c, alpha) -> tuple:
    return tuple(tuple(p) for p in _recursion(n, c, alpha, circuits=True))


def _normalize(p, n):
    p = list(p) + [0] * (n + 1 - len(p))
    return tuple(p[: n + 1])


def build_B(c, n: int) -> RenormPolynomial:
    """B_n(v): renormalized v^n with chain corrections only."""
    if n < 0:
        raise ValueError("n must be non-negative")
    c = _exact(c)
    return RenormPolynomial("B", n, _normalize(_b_table(n, c)[n], n), c)


def build_A(c, alpha, n: int) -> RenormPolynomial:
    """A_n(v): Wick power polynomial with chain and circuit corrections."""
    if n < 0:
        raise ValueError("n must be non-negative")
    c, alpha = _exact(c), _exact(alpha)
    return RenormPolynomial("A", n, _normalize(_a_table(n, c, alpha)[n], n), c, alpha)


# ---------------------------------------------------------------- generating functions

def series_coeffs_B(c, n: int) -> list[list]:
    """Coefficient lists of B_0..B_n from sum_n B_n t^n/n! = exp(v t/(1+c t)).

    Formal power series in t with polynomial-in-v coefficients; used as an
    independent check of the recursion.
    """
    # t/(1+ct) = sum_{i>=1} (-c)^{i-1} t^i
    g = [[0]] + [[0, (-c) ** (i - 1)] for i in range(1, n + 1)]
    e = _series_exp(g, n)
    return [_pscale(e[k], math.factorial(k)) for k in range(n + 1)]


def series_coeffs_A(c, alpha, n: int) -> list[list]:
    """Coefficient lists from sum_n A_n t^n/n! = (1+ct)^{-alpha} exp((v+alpha c) t/(1+ct))."""
    g = [[0]]
    for i in range(1, n + 1):
        base = (-c) ** (i - 1)
        # (v + alpha c) t/(1+ct)  minus  alpha log(1+ct)
        const = alpha * c * base - alpha * (-1) ** (i - 1) * c**i / i
        g.append([const, base])
    e = _series_exp(g, n)
    return [_pscale(e[k], math.factorial(k)) for k in range(n + 1)]


def _series_exp(g: list[list], n: int) -> list[list]:
    """exp of a series with g[0] = 0, via e' = g' e."""
    e = [[1]] + [[0] for _ in range(n)]
    for k in range(1, n + 1):
        acc = [0]
        for i in range(1, k + 1):
            acc = _padd(acc, _pscale(_pmul(g[i], e[k - i]), i))
        e[k] = _pscale(acc, Fraction(1, k) if all(isinstance(v, (int, Fraction)) for v in acc) else 1.0 / k)
    return e


# ---------------------------------------------------------------- fields

def _prepare(soup, measure: LoopMeasure) -> tuple[SoupBatch, bool]:
    if isinstance(soup, LoopSoup):
        batch, scalar = soup.to_batch(measure.m), True
    else:
        batch, scalar = soup, False
    check_kernel(measure, batch)
    return batch, scalar


def _out(values: np.ndarray, scalar: bool):
    return float(values[0]) if scalar else values


def L_n_on_loop(kernel: MarkovKernel, n: int, x: int, loop: BasedLoop) -> float:
    b = build_B(float(kernel.green[x, x]), n)
    return float(b(float(loop.occupation(kernel.num_states)[x])))


def psi_all(batch: SoupBatch, measure: LoopMeasure) -> np.ndarray:
    """psi(x) for every soup and state, shape (n_soups, m)."""
    sums = np.stack([batch.per_soup_sum(batch.occ[:, x]) for x in range(batch.m)], axis=1)
    return sums - batch.alpha * measure.compensators()[None, :]


def psi_field(soup, measure: LoopMeasure, x: int):
    """Centered summed occupation at x, using the cutoff compensator."""
    batch, scalar = _prepare(soup, measure)
    v = batch.per_soup_sum(batch.occ[:, x]) - batch.alpha * measure.epsilon_compensator(x)
    return _out(v, scalar)


def psi_n(soup, measure: LoopMeasure, n: int, nu):
    """Renormalized n-fold self-intersection local time of the soup, integrated against nu."""
    batch, scalar = _prepare(soup, measure)
    nu = as_measure(nu, measure.m)
    S = batch.power_sums(n)
    out = np.zeros(batch.n_soups)
    green = measure.kernel.green
    for x in nu.support():
        b = build_B(float(green[x, x]), n)
        val = sum(float(co) * S[:, x, j] for j, co in enumerate(b.coeffs) if j and co)
        out += nu.weights[x] * (val - batch.alpha * float(b.mu_value()))
    return _out(out, scalar)


def psi_tilde_n(soup, measure: LoopMeasure, n: int, alpha: float | None, nu):
    """Wick power A_n(psi(x)) integrated against nu."""
    batch, scalar = _prepare(soup, measure)
    if alpha is None:
        alpha = batch.alpha
    elif not math.isclose(alpha, batch.alpha, rel_tol=1e-12):
        raise ValueError("alpha does not match the soup intensity")
    nu = as_measure(nu, measure.m)
    out = np.zeros(batch.n_soups)
    green = measure.kernel.green
    for x in nu.support():
        a = build_A(float(green[x, x]), float(alpha), n)
        psi = batch.per_soup_sum(batch.occ[:, x]) - batch.alpha * measure.epsilon_compensator(x)
        out += nu.weights[x] * a(psi)
    return _out(out, scalar)


def I_ll_chaos(soup, measure: LoopMeasure, ells: Sequence[int], nu):
    """sum_x nu(x) I_n(L_{l_1}(x), ..., L_{l_n}(x))."""
    from .chaos import I_n, SoupFunctional

    batch, scalar = _prepare(soup, measure)
    nu = as_measure(nu, measure.m)
    out = np.zeros(batch.n_soups)
    for x in nu.support():
        gs = [SoupFunctional.renormalized(measure.kernel, x, l) for l in ells]
        out += nu.weights[x] * I_n(batch, gs)
    return _out(out, scalar)


def wick_power_by_chaos(soup, measure: LoopMeasure, n: int, nu):
    """sum over set partitions D_1..D_l of [1, n] of I_{|D_1|, ..., |D_l|}(nu)."""
    from .combinatorics import set_partitions

    batch, scalar = _prepare(soup, measure)
    cache: dict = {}
    out = np.zeros(batch.n_soups)
    for part in set_partitions(n):
        key = tuple(sorted(len(b) for b in part))
        if key not in cache:
            cache[key] = I_ll_chaos(batch, measure, key, nu)
        out += cache[key]
    return _out(out, scalar)
