"""Loop measure on a finite killed chain: exact moments and loop-soup sampling.

The measure splits into trivial loops (one state, no jumps) with intensity
e^{-q t}/t dt at each state, and skeleton loops (x_1..x_k, k >= 2) with mass
(1/k) prod P_J(x_i, x_{i+1}) and independent Exp(q(x_i)) holding times.
Only trivial loops of duration >= epsilon are sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.integrate
import scipy.special

from .errors import CutoffTooLarge, InfiniteMass, KernelMismatch
from .kernel import MarkovKernel


# ---------------------------------------------------------------- polynomials

class OccupationPolynomial:
    """Sparse polynomial in the occupation times L(0), ..., L(m-1)."""

    __slots__ = ("m", "terms")

    def __init__(self, m: int, terms: dict | None = None):
        self.m = m
        self.terms: dict[tuple[int, ...], float] = {}
        for e, c in (terms or {}).items():
            e = tuple(int(v) for v in e)
            if len(e) != m or any(v < 0 for v in e):
                raise ValueError("bad exponent vector")
            if c != 0:
                self.terms[e] = self.terms.get(e, 0) + c

    @classmethod
    def occupation(cls, m: int, x: int, power: int = 1) -> "OccupationPolynomial":
        e = [0] * m
        e[x] = power
        return cls(m, {tuple(e): 1})

    @classmethod
    def univariate(cls, m: int, x: int, coeffs: Sequence) -> "OccupationPolynomial":
        """sum_j coeffs[j] L(x)^j."""
        out = {}
        for j, c in enumerate(coeffs):
            e = [0] * m
            e[x] = j
            out[tuple(e)] = c
        return cls(m, out)

    @classmethod
    def linear(cls, weights: Sequence[float]) -> "OccupationPolynomial":
        m = len(weights)
        return sum(
            (cls.occupation(m, x) * w for x, w in enumerate(weights) if w), cls(m)
        )

    def constant(self):
        return self.terms.get((0,) * self.m, 0)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def _coerce(self, other):
        if isinstance(other, OccupationPolynomial):
            if other.m != self.m:
                raise ValueError("state counts differ")
            return other
        return OccupationPolynomial(self.m, {(0,) * self.m: other})

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return OccupationPolynomial(self.m, out)

    __radd__ = __add__

    def __neg__(self):
        return OccupationPolynomial(self.m, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, OccupationPolynomial):
            return OccupationPolynomial(self.m, {e: c * other for e, c in self.terms.items()})
        other = self._coerce(other)
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return OccupationPolynomial(self.m, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = OccupationPolynomial(self.m, {(0,) * self.m: 1})
        for _ in range(k):
            out = out * self
        return out

    def evaluate(self, occ: np.ndarray) -> np.ndarray:
        occ = np.atleast_2d(np.asarray(occ, dtype=float))
        out = np.zeros(occ.shape[0])
        for e, c in self.terms.items():
            term = np.full(occ.shape[0], float(c))
            for x, p in enumerate(e):
                if p:
                    term = term * occ[:, x] ** p
            out += term
        return out

    def __repr__(self):
        parts = []
        for e, c in sorted(self.terms.items()):
            mono = "*".join(f"L{x}^{p}" if p > 1 else f"L{x}" for x, p in enumerate(e) if p)
            parts.append(f"{c}*{mono}" if mono else f"{c}")
        return " + ".join(parts) or "0"


# ---------------------------------------------------------------- exact moments

def _green(kernel_or_measure):
    k = getattr(kernel_or_measure, "kernel", kernel_or_measure)
    return k.green


def mu_moment(kernel_or_measure, points: Sequence[int]) -> float:
    """mu(prod_j L(y_j)): sum over circular orderings of the product of u along the circle."""
    points = tuple(int(p) for p in points)
    if not points:
        raise ValueError("need at least one point")
    u = _green(kernel_or_measure)
    m = u.shape[0]
    counts = [0] * m
    for p in points:
        counts[p] += 1
    return _circle_sum(u.tobytes(), m, tuple(counts))


@lru_cache(maxsize=4096)
def _circle_sum(ubytes: bytes, m: int, counts: tuple[int, ...]) -> float:
    u = np.frombuffer(ubytes).reshape(m, m)
    y0 = next(x for x in range(m) if counts[x])
    rest = list(counts)
    rest[y0] -= 1
    # labelled orderings of the other points map onto state words with
    # multiplicity prod(rest!) each
    mult = 1
    for c in rest:
        mult *= math.factorial(c)

    @lru_cache(maxsize=None)
    def f(left: tuple[int, ...], last: int) -> float:
        if not any(left):
            return u[last, y0]
        tot = 0.0
        for x in range(m):
            if left[x]:
                nl = list(left)
                nl[x] -= 1
                tot += u[last, x] * f(tuple(nl), x)
        return tot

    return mult * f(tuple(rest), y0)


def mu_expectation(kernel_or_measure, poly: OccupationPolynomial) -> float:
    """Exact mu(poly) by multilinearity; poly must have no constant term."""
    if poly.constant() != 0:
        raise InfiniteMass("the loop measure has infinite mass; drop the constant term")
    tot = 0.0
    for e, c in poly.terms.items():
        pts = [x for x, p in enumerate(e) for _ in range(p)]
        tot += c * mu_moment(kernel_or_measure, pts)
    return tot


def mu_single_site(kernel_or_measure, x: int, f) -> float:
    """mu(f(L(x))) for f(0) = 0, using the law e^{-t/c}/t dt of L(x) under mu, c = u(x,x)."""
    c = float(_green(kernel_or_measure)[x, x])
    val, _ = scipy.integrate.quad(lambda t: f(t) * math.exp(-t / c) / t, 0.0, np.inf, limit=200)
    return float(val)


# ---------------------------------------------------------------- loops and soups

@dataclass(frozen=True)
class BasedLoop:
    states: tuple[int, ...]
    durations: tuple[float, ...]

    def __post_init__(self):
        if len(self.states) != len(self.durations) or not self.states:
            raise ValueError("states and durations must match and be non-empty")
        if len(self.states) == 1:
            return
        k = len(self.states)
        if any(self.states[i] == self.states[(i + 1) % k] for i in range(k)):
            raise ValueError("skeleton loops never repeat a state cyclically")

    @property
    def trivial(self) -> bool:
        return len(self.states) == 1

    def occupation(self, m: int) -> np.ndarray:
        return np.bincount(np.array(self.states), weights=np.array(self.durations), minlength=m)

    def to_line(self) -> str:
        if self.trivial:
            return f"T {self.states[0]} {self.durations[0]!r}"
        xs = " ".join(str(s) for s in self.states)
        ts = " ".join(repr(float(t)) for t in self.durations)
        return f"S {xs} | {ts}"

    @staticmethod
    def from_line(line: str) -> "BasedLoop":
        parts = line.split()
        if parts[0] == "T":
            return BasedLoop((int(parts[1]),), (float(parts[2]),))
        if parts[0] == "S":
            bar = parts.index("|")
            return BasedLoop(
                tuple(int(v) for v in parts[1:bar]), tuple(float(v) for v in parts[bar + 1 :])
            )
        raise ValueError(f"unknown loop line: {line!r}")


class LoopMeasure:
    """The loop measure of a kernel, with trivial-loop cutoff ``epsilon``."""

    def __init__(self, kernel: MarkovKernel, epsilon: float = 1e-8, tail: float = 1e-16):
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        self.kernel = kernel
        self.epsilon = float(epsilon)
        q = kernel.exit_rate
        self.trivial_mass = scipy.special.exp1(q * self.epsilon) if epsilon > 0 else np.full(len(q), np.inf)
        self._build_lengths(tail)

    @property
    def m(self) -> int:
        return self.kernel.num_states

    @property
    def jump_mass(self) -> float:
        return self.kernel.jump_mass

    @property
    def total_mass(self) -> float:
        return float(self.trivial_mass.sum() + self.jump_mass)

    def _build_lengths(self, tail: float) -> None:
        P = self.kernel.jump_chain
        m = P.shape[0]
        total = self.jump_mass
        powers = [np.eye(m), P.copy()]
        weights = [0.0, 0.0]
        if total <= 0:
            self.powers = powers
            self.length_probs = np.zeros(2)
            return
        k = 1
        acc = 0.0
        norm = np.abs(P).sum(axis=1).max()
        while True:
            k += 1
            Pk = powers[-1] @ P
            powers.append(Pk)
            w = float(np.trace(Pk)) / k
            weights.append(w)
            acc += w
            # tail bound: trace(P^j) <= m * ||P^k||^(j/k) style geometric decay
            nk = np.abs(Pk).sum(axis=1).max()
            if k > 4 and m * nk / k < tail * total and nk < 1:
                break
            if k > 100000:
                raise RuntimeError("jump chain decays too slowly to tabulate loop lengths")
        self.powers = powers
        w = np.array(weights)
        self.length_probs = w / w.sum()

    def epsilon_compensator(self, x: int, epsilon: float | None = None) -> float:
        """Exact mean of the summed occupation at x per unit intensity under the cutoff."""
        eps = self.epsilon if epsilon is None else float(epsilon)
        q = self.kernel.exit_rate[x]
        if math.isinf(eps):
            return float(self.kernel.green[x, x] - 1.0 / q)
        return float(self.kernel.green[x, x] - (-math.expm1(-q * eps)) / q)

    def compensators(self) -> np.ndarray:
        return np.array([self.epsilon_compensator(x) for x in range(self.m)])

    def truncation_gap(self, x: int, power: int) -> float:
        """mu(L(x)^power) minus its cutoff version: int_0^eps t^(power-1) e^{-q t} dt."""
        q = self.kernel.exit_rate[x]
        return float(scipy.special.gammainc(power, q * self.epsilon) * math.gamma(power) / q**power)

    # ---- sampling

    def check_cutoff(self) -> None:
        if self.epsilon <= 0:
            raise CutoffTooLarge("sampling needs a positive cutoff")
        if self.epsilon >= 1.0 / self.kernel.exit_rate.min():
            raise CutoffTooLarge("cutoff must be below the shortest mean holding time")

    def _trivial_tables(self):
        if hasattr(self, "_tables"):
            return self._tables
        tabs = []
        for q in self.kernel.exit_rate:
            a = q * self.epsilon
            s = np.geomspace(a, 80.0, 6000)
            y = scipy.special.exp1(s)
            tabs.append((np.log(y[::-1]), np.log(s[::-1]), float(scipy.special.exp1(a))))
        self._tables = tabs
        return tabs

    def sample_trivial_durations(self, x: int, n: int, rng: np.random.Generator) -> np.ndarray:
        """Durations with density proportional to e^{-q t}/t on [epsilon, inf)."""
        logy, logs, top = self._trivial_tables()[x]
        q = self.kernel.exit_rate[x]
        target = top * (1.0 - rng.random(n))
        lt = np.log(target)
        ls = np.interp(lt, logy, logs)
        s = np.exp(ls)
        # one Newton step on E1(s) = target in log s
        s = s * np.exp((scipy.special.exp1(s) - target) * np.exp(s))
        s = np.maximum(s, q * self.epsilon)
        return s / q

    def sample_skeletons(self, n: int, rng: np.random.Generator, keep_paths: bool = False):
        """n skeleton loops from mu_J normalized; returns (occupations, paths or None)."""
        m = self.m
        occ = np.zeros((n, m))
        paths = [None] * n if keep_paths else None
        if n == 0:
            return occ, paths
        P = self.kernel.jump_chain
        q = self.kernel.exit_rate
        lengths = rng.choice(len(self.length_probs), size=n, p=self.length_probs)
        for k in np.unique(lengths):
            idx = np.nonzero(lengths == k)[0]
            cnt = idx.size
            Pk = self.powers[k]
            d = np.clip(np.diag(Pk), 0, None)
            root = rng.choice(m, size=cnt, p=d / d.sum())
            seq = np.empty((cnt, k), dtype=np.int64)
            seq[:, 0] = root
            cur = root
            for i in range(1, k):
                # next state given current and the remaining k - i steps back to root
                back = self.powers[k - i][:, root].T  # (cnt, m): P^{k-i}(y, root)
                w = P[cur] * back
                w /= w.sum(axis=1, keepdims=True)
                cum = np.cumsum(w, axis=1)
                r = rng.random(cnt)[:, None]
                nxt = np.minimum((r >= cum).sum(axis=1), m - 1)
                seq[:, i] = nxt
                cur = nxt
            taus = rng.exponential(1.0, size=(cnt, k)) / q[seq]
            rows = np.repeat(idx, k)
            np.add.at(occ, (rows, seq.ravel()), taus.ravel())
            if keep_paths:
                for r_, s_, t_ in zip(idx, seq, taus):
                    paths[r_] = (tuple(int(v) for v in s_), tuple(float(v) for v in t_))
        return occ, paths

    def sample_normalized(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Occupation vectors of n loops drawn from mu_eps / |mu_eps|."""
        self.check_cutoff()
        masses = np.append(self.trivial_mass, self.jump_mass)
        strata = rng.choice(len(masses), size=n, p=masses / masses.sum())
        occ = np.zeros((n, self.m))
        for x in range(self.m):
            idx = np.nonzero(strata == x)[0]
            occ[idx, x] = self.sample_trivial_durations(x, idx.size, rng)
        idx = np.nonzero(strata == self.m)[0]
        occ[idx], _ = self.sample_skeletons(idx.size, rng)
        return occ

    def mu_moment(self, points):
        return mu_moment(self, points)

    def mu_expectation(self, poly):
        return mu_expectation(self, poly)


@dataclass
class SoupBatch:
    """Many independent soups stored loop-by-loop.

    ``soup[i]`` is the soup index of loop i and ``occ[i]`` its occupation vector.
    """

    n_soups: int
    soup: np.ndarray
    occ: np.ndarray
    alpha: float
    epsilon: float
    kernel: MarkovKernel | None = None
    paths: list | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.occ.shape[1]

    def per_soup_sum(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.soup, weights=values, minlength=self.n_soups)

    def power_sums(self, top: int) -> np.ndarray:
        """S[s, x, j] = sum over loops of soup s of L(x)^j, for j = 0..top (S[...,0] unused)."""
        rows, cols = np.nonzero(self.occ)
        vals = self.occ[rows, cols]
        key = self.soup[rows] * self.m + cols
        out = np.zeros((self.n_soups, self.m, top + 1))
        pw = np.ones_like(vals)
        for j in range(1, top + 1):
            pw = pw * vals
            out[:, :, j] = np.bincount(key, weights=pw, minlength=self.n_soups * self.m).reshape(
                self.n_soups, self.m
            )
        return out

    def loop_counts(self) -> np.ndarray:
        return np.bincount(self.soup, minlength=self.n_soups)

    def nontrivial_counts(self) -> np.ndarray:
        """Loops per soup that visit at least two states (the skeleton stratum)."""
        multi = (self.occ > 0).sum(axis=1) >= 2
        return np.bincount(self.soup[multi], minlength=self.n_soups)

    def soup_at(self, s: int) -> "LoopSoup":
        idx = np.nonzero(self.soup == s)[0]
        loops = []
        for i in idx:
            if self.paths is not None and self.paths[i] is not None:
                loops.append(BasedLoop(*self.paths[i]))
            else:
                nz = np.nonzero(self.occ[i])[0]
                if nz.size != 1:
                    raise ValueError("skeleton detail was not kept for this batch")
                loops.append(BasedLoop((int(nz[0]),), (float(self.occ[i, nz[0]]),)))
        return LoopSoup(self.alpha, loops, self.epsilon, None, self.kernel)

    @staticmethod
    def from_occupations(occ_list: Sequence[np.ndarray], alpha: float, epsilon: float = 0.0,
                         kernel: MarkovKernel | None = None) -> "SoupBatch":
        """Build a batch from arbitrary per-soup occupation arrays (synthetic soups)."""
        m = None
        soups, occs = [], []
        for s, occ in enumerate(occ_list):
            occ = np.atleast_2d(np.asarray(occ, dtype=float))
            if occ.shape[1] > 0:
                m = occ.shape[1]
            if occ.size == 0:
                continue
            soups.append(np.full(occ.shape[0], s))
            occs.append(occ)
        if not occs:
            if m is None:
                m = kernel.num_states if kernel is not None else 1
            return SoupBatch(len(occ_list), np.zeros(0, dtype=np.int64), np.zeros((0, m)), alpha, epsilon, kernel)
        return SoupBatch(len(occ_list), np.concatenate(soups).astype(np.int64), np.vstack(occs), alpha,
                         epsilon, kernel)

    def union(self, other: "SoupBatch") -> "SoupBatch":
        """Soup-wise disjoint union of two batches with the same soup count."""
        if other.n_soups != self.n_soups:
            raise ValueError("batches must hold the same number of soups")
        return SoupBatch(
            self.n_soups,
            np.concatenate([self.soup, other.soup]),
            np.vstack([self.occ, other.occ]),
            self.alpha + other.alpha,
            self.epsilon,
            self.kernel,
        )


@dataclass
class LoopSoup:
    alpha: float
    loops: list
    epsilon: float
    seed: int | None = None
    kernel: MarkovKernel | None = None

    def occupations(self, m: int | None = None) -> np.ndarray:
        if m is None:
            m = self.kernel.num_states
        if not self.loops:
            return np.zeros((0, m))
        return np.vstack([lp.occupation(m) for lp in self.loops])

    def to_batch(self, m: int | None = None) -> SoupBatch:
        occ = self.occupations(m)
        return SoupBatch(1, np.zeros(occ.shape[0], dtype=np.int64), occ, self.alpha, self.epsilon, self.kernel)

    def to_text(self) -> str:
        return "".join(lp.to_line() + "\n" for lp in self.loops)

    @staticmethod
    def from_text(text: str, alpha: float, epsilon: float) -> "LoopSoup":
        loops = [BasedLoop.from_line(line) for line in text.splitlines() if line.strip()]
        return LoopSoup(alpha, loops, epsilon)


def soups_to_text(soups: Sequence[LoopSoup]) -> str:
    """Soup blocks: a ``# soup`` header line, one loop per line, a blank line."""
    out = []
    for i, soup in enumerate(soups):
        seed = "" if soup.seed is None else f" seed={soup.seed}"
        out.append(f"# soup {i} alpha={soup.alpha!r} epsilon={soup.epsilon!r}{seed}\n")
        out.append(soup.to_text())
        out.append("\n")
    return "".join(out)


def soups_from_text(text: str) -> list[LoopSoup]:
    soups: list[LoopSoup] = []
    for line in text.splitlines():
        if line.startswith("# soup"):
            fields = dict(tok.split("=", 1) for tok in line.split()[3:])
            seed = int(fields["seed"]) if "seed" in fields else None
            soups.append(LoopSoup(float(fields["alpha"]), [], float(fields["epsilon"]), seed))
        elif line.strip():
            if not soups:
                raise ValueError("loop line before the first soup header")
            soups[-1].loops.append(BasedLoop.from_line(line))
    return soups


def sample_soup_batch(
    measure: LoopMeasure,
    alpha: float,
    n_soups: int,
    rng: np.random.Generator,
    keep_paths: bool = False,
) -> SoupBatch:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    measure.check_cutoff()
    m = measure.m
    soups, occs, paths = [], [], []
    for x in range(m):
        cnt = rng.poisson(alpha * measure.trivial_mass[x], size=n_soups)
        tot = int(cnt.sum())
        o = np.zeros((tot, m))
        o[:, x] = measure.sample_trivial_durations(x, tot, rng)
        soups.append(np.repeat(np.arange(n_soups), cnt))
        occs.append(o)
        if keep_paths:
            paths.extend(((x,), (float(t),)) for t in o[:, x])
    cnt = rng.poisson(alpha * measure.jump_mass, size=n_soups) if measure.jump_mass > 0 else np.zeros(n_soups, dtype=np.int64)
    o, p = measure.sample_skeletons(int(cnt.sum()), rng, keep_paths)
    soups.append(np.repeat(np.arange(n_soups), cnt))
    occs.append(o)
    if keep_paths:
        paths.extend(p)
    soup = np.concatenate(soups).astype(np.int64)
    occ = np.vstack(occs)
    order = np.argsort(soup, kind="stable")
    if keep_paths:
        paths = [paths[i] for i in order]
    return SoupBatch(n_soups, soup[order], occ[order], float(alpha), measure.epsilon, measure.kernel,
                     paths if keep_paths else None)


def sample_loop_soup(measure: LoopMeasure, alpha: float, rng) -> LoopSoup:
    """One soup with full loop detail; ``rng`` may be a Generator or an integer seed."""
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.Generator(np.random.Philox(seed))
    soup = sample_soup_batch(measure, alpha, 1, rng, keep_paths=True).soup_at(0)
    soup.seed = seed
    return soup


def check_kernel(measure: LoopMeasure, batch: SoupBatch) -> None:
    if batch.kernel is not None and not measure.kernel.same_as(batch.kernel):
        raise KernelMismatch("soup was sampled from a different kernel")
