"""Constrained permutation and partition families used by the moment formulas.

Positions and values are 0-based throughout. A permutation is stored in
one-line notation as a tuple ``pi`` with ``pi[j]`` the image of ``j``.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from .errors import EnumerationBudget


# ---------------------------------------------------------------- layouts

@dataclass(frozen=True)
class BlockLayout:
    sizes: tuple[int, ...]

    def __post_init__(self):
        if any(s < 1 for s in self.sizes):
            raise ValueError("block sizes must be positive")

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def k(self) -> int:
        return len(self.sizes)

    def block_of(self) -> tuple[int, ...]:
        return tuple(b for b, s in enumerate(self.sizes) for _ in range(s))


def _layout(layout) -> BlockLayout:
    return layout if isinstance(layout, BlockLayout) else BlockLayout(tuple(layout))


# ---------------------------------------------------------------- permutations

def circular_permutations(k: int) -> Iterator[tuple[int, ...]]:
    """Orderings of range(k) on a circle, each rotation class once (first entry 0)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    for rest in itertools.permutations(range(1, k)):
        yield (0,) + rest


def cycles(pi: Sequence[int]) -> list[tuple[int, ...]]:
    seen = [False] * len(pi)
    out = []
    for s in range(len(pi)):
        if seen[s]:
            continue
        cyc = []
        j = s
        while not seen[j]:
            seen[j] = True
            cyc.append(j)
            j = pi[j]
        out.append(tuple(cyc))
    return out


def cycle_count(pi: Sequence[int]) -> int:
    return len(cycles(pi))


def alternating_maps(layout) -> Iterator[tuple[int, ...]]:
    """Maps [n] -> [k] hitting block i exactly n_i times with no cyclic repeats.

    Yields nothing (an empty family, not an error) when some n_i > n - n_i.
    """
    lay = _layout(layout)
    if lay.k < 2:
        raise ValueError("alternating maps need at least two blocks")
    n = lay.n
    if max(lay.sizes) > n - max(lay.sizes):
        return
    left = list(lay.sizes)
    seq = [0] * n

    def rec(j):
        if j == n:
            if seq[-1] != seq[0]:
                yield tuple(seq)
            return
        slots = n - j
        for b in range(lay.k):
            if left[b] == 0 or (j > 0 and seq[j - 1] == b):
                continue
            left[b] -= 1
            # a block with r entries left needs at least 2r - 1 free slots
            ok = all(2 * r - 1 <= slots - 1 or r == 0 for r in left)
            if ok:
                seq[j] = b
                yield from rec(j + 1)
            left[b] += 1

    yield from rec(0)


def alternating_cycle_perms(layout, same_cycle: bool) -> Iterator[tuple[int, ...]]:
    """Permutations pi of [n] with block(pi(j)) != block(j) for every j.

    With ``same_cycle`` each block's positions must also lie in one cycle.
    Yielded in lexicographic order of one-line notation.
    """
    lay = _layout(layout)
    n = lay.n
    blk = lay.block_of()
    members = [[j for j in range(n) if blk[j] == b] for b in range(lay.k)]
    pi = [-1] * n
    inv = [-1] * n
    used = [False] * n

    def closes(j, v):
        # does setting pi[j] = v close a cycle? return the cycle if so
        cyc = [j]
        w = v
        while w != j:
            if w == -1:
                return None
            cyc.append(w)
            w = pi[w]
        return cyc

    def rec(j):
        if j == n:
            yield tuple(pi)
            return
        for v in range(n):
            if used[v] or blk[v] == blk[j]:
                continue
            if same_cycle:
                cyc = closes(j, v)
                if cyc is not None:
                    cs = set(cyc)
                    bad = False
                    for b in {blk[w] for w in cyc}:
                        if any(w not in cs for w in members[b]):
                            bad = True
                            break
                    if bad:
                        continue
            pi[j] = v
            inv[v] = j
            used[v] = True
            yield from rec(j + 1)
            used[v] = False
            inv[v] = -1
            pi[j] = -1

    yield from rec(0)


def cycle_histogram(layout, same_cycle: bool) -> Counter:
    """Counter mapping cycle count c to the number of alternating permutations."""
    return Counter(cycle_count(p) for p in alternating_cycle_perms(layout, same_cycle))


def rising_factorial_sum(n: int, alpha):
    """n! * alpha (alpha+1) ... (alpha+n-1)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = math.factorial(n)
    for i in range(n):
        out = out * (alpha + i)
    return out


# ---------------------------------------------------------------- partitions

def set_partitions(p: int) -> Iterator[list[list[int]]]:
    """All set partitions of range(p), blocks in order of first element."""
    if p == 0:
        yield []
        return
    blocks: list[list[int]] = []

    def rec(i):
        if i == p:
            yield [list(b) for b in blocks]
            return
        for b in blocks:
            b.append(i)
            yield from rec(i + 1)
            b.pop()
        blocks.append([i])
        yield from rec(i + 1)
        blocks.pop()

    yield from rec(0)


def windows_from_sizes(sizes: Sequence[int]) -> list[tuple[int, ...]]:
    out, s = [], 0
    for n in sizes:
        out.append(tuple(range(s, s + n)))
        s += n
    return out


def separated_partitions(
    p: int, windows: Iterable[Iterable[int]], min_block: int = 1
) -> Iterator[list[tuple[int, ...]]]:
    """Partitions of range(p) whose blocks meet each window at most once."""
    win_of = [-1] * p
    for w, win in enumerate(windows):
        for i in win:
            if win_of[i] != -1:
                raise ValueError("windows must be disjoint")
            win_of[i] = w
    blocks: list[list[int]] = []
    block_wins: list[set] = []

    def rec(i):
        if i == p:
            if all(len(b) >= min_block for b in blocks):
                yield [tuple(b) for b in blocks]
            return
        # every short block must still be completable
        short = sum(max(0, min_block - len(b)) for b in blocks)
        if short > p - i:
            return
        w = win_of[i]
        for b, bw in zip(blocks, block_wins):
            if w != -1 and w in bw:
                continue
            b.append(i)
            added = w != -1
            if added:
                bw.add(w)
            yield from rec(i + 1)
            if added:
                bw.discard(w)
            b.pop()
        blocks.append([i])
        block_wins.append({w} if w != -1 else set())
        yield from rec(i + 1)
        blocks.pop()
        block_wins.pop()

    yield from rec(0)


# ---------------------------------------------------------------- sigma indices

@dataclass(frozen=True)
class SigmaIndex:
    """Chain multiplicities ``chains[i-1] = k_i`` and circuit ``circuits[j] = m_j`` (j >= 2)."""

    chains: tuple[int, ...] = ()
    circuits: tuple[tuple[int, int], ...] = ()

    @staticmethod
    def make(chains: dict | Sequence[int] = (), circuits: dict | None = None) -> "SigmaIndex":
        if isinstance(chains, dict):
            top = max(chains, default=0)
            chains = tuple(chains.get(i, 0) for i in range(1, top + 1))
        chains = tuple(chains)
        while chains and chains[-1] == 0:
            chains = chains[:-1]
        circ = tuple(sorted((j, m) for j, m in (circuits or {}).items() if m))
        if any(j < 2 for j, _ in circ):
            raise ValueError("circuits have order at least 2")
        return SigmaIndex(chains, circ)

    def k(self, i: int) -> int:
        return self.chains[i - 1] if 1 <= i <= len(self.chains) else 0

    def m(self, j: int) -> int:
        return dict(self.circuits).get(j, 0)

    @property
    def size(self) -> int:
        return sum(i * k for i, k in enumerate(self.chains, 1)) + sum(j * m for j, m in self.circuits)

    @property
    def size_plus(self) -> int:
        return sum((i + 1) * k for i, k in enumerate(self.chains, 1)) + sum(
            j * m for j, m in self.circuits
        )

    @property
    def num_chains(self) -> int:
        return sum(self.chains)


def _partitions_into(total: int, parts: Sequence[int]) -> Iterator[dict]:
    """Multiplicity vectors {part: count} with sum(part * count) == total."""
    if not parts:
        if total == 0:
            yield {}
        return
    p, rest = parts[0], parts[1:]
    for c in range(total // p + 1):
        for tail in _partitions_into(total - c * p, rest):
            d = dict(tail)
            if c:
                d[p] = c
            yield d


def sigma_indices(n: int, circuits: bool) -> Iterator[SigmaIndex]:
    """All nonzero sigma with size_plus <= n (chains of order i use i+1 slots)."""
    for used in range(1, n + 1):
        # split ``used`` slots between chains (weight i+1) and circuits (weight j)
        for c_slots in range(0, used + 1 if circuits else 1):
            for ch in _partitions_into(used - c_slots, list(range(2, n + 1))):
                for ci in _partitions_into(c_slots, list(range(2, n + 1))):
                    chains = {w - 1: c for w, c in ch.items()}
                    yield SigmaIndex.make(chains, ci)


def remove_relabel_count(sigma: SigmaIndex, n: int) -> Fraction:
    """n!/(prod m_j! j^m_j) * (n-|s|)!/(prod k_i! (n-|s|_+)!)."""
    if sigma.size_plus > n:
        raise ValueError("need |sigma|_+ <= n")
    num = math.factorial(n) * math.factorial(n - sigma.size)
    den = math.factorial(n - sigma.size_plus)
    for k in sigma.chains:
        den *= math.factorial(k)
    for j, m in sigma.circuits:
        den *= math.factorial(m) * j**m
    return Fraction(num, den)


def _chains_in_cycle(cyc: Sequence[int], inside) -> tuple[list[list[int]], bool]:
    """Maximal runs of inside elements along a cycle; flag if the cycle is all inside."""
    L = len(cyc)
    if all(inside(v) for v in cyc):
        return [list(cyc)], True
    # rotate so that the sequence starts at an outside element
    s = next(i for i, v in enumerate(cyc) if not inside(v))
    seq = list(cyc[s:]) + list(cyc[:s])
    runs, cur = [], []
    for v in seq:
        if inside(v):
            cur.append(v)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs, False


def remove_relabel(
    cycle_list: Sequence[Sequence[int]], m: int
) -> tuple[SigmaIndex, tuple[tuple[int, ...], ...]]:
    """Apply remove-and-relabel to a permutation given as cycles.

    Elements ``< m`` are outside, the rest inside. Each cycle containing an
    outside element is read starting at its smallest outside element, cycles
    ordered by that element. Circuits (all-inside cycles) are dropped, chains
    are cut to their first element and the survivors are relabelled m, m+1, ...
    in reading order. Returns sigma and the reduced cycles.
    """
    inside = lambda v: v >= m
    chains = Counter()
    circ = Counter()
    kept = []
    for cyc in cycle_list:
        runs, closed = _chains_in_cycle(cyc, inside)
        if closed:
            circ[len(cyc)] += 1
            continue
        start = min(range(len(cyc)), key=lambda i: (inside(cyc[i]), cyc[i]))
        seq = list(cyc[start:]) + list(cyc[:start])
        out = []
        prev_inside = False
        for v in seq:
            if inside(v):
                if not prev_inside:
                    out.append(v)
                prev_inside = True
            else:
                out.append(v)
                prev_inside = False
        kept.append(out)
        for r in runs:
            if len(r) >= 2:
                chains[len(r) - 1] += 1
    kept.sort(key=lambda c: c[0])
    nxt = m
    relabelled = []
    for c in kept:
        row = []
        for v in c:
            if inside(v):
                row.append(nxt)
                nxt += 1
            else:
                row.append(v)
        relabelled.append(tuple(row))
    return SigmaIndex.make(dict(chains), dict(circ)), tuple(relabelled)


def brute_force_preimages(m: int, n: int, circle: bool) -> Counter:
    """Tally (sigma, reduced permutation) over all permutations of [m+n].

    ``circle`` restricts to single-cycle permutations; otherwise all
    fixed-point-free permutations are used.
    """
    if m < 1:
        raise ValueError("need at least one outside element")
    N = m + n
    tally = Counter()
    if circle:
        for seq in circular_permutations(N):
            tally[remove_relabel([seq], m)] += 1
    else:
        for pi in itertools.permutations(range(N)):
            if any(pi[j] == j for j in range(N)):
                continue
            cyc = [tuple(c) for c in cycles(pi)]
            tally[remove_relabel(cyc, m)] += 1
    return tally


# ---------------------------------------------------------------- degrees

def degree_vector(ells: Sequence[int]) -> dict[int, int]:
    return dict(Counter(ells))


def multiplicity(ells: Sequence[int]) -> int:
    out = 1
    for c in Counter(ells).values():
        out *= math.factorial(c)
    return out


def check_budget(count_estimate: float, budget: float = 5e6) -> None:
    if count_estimate > budget:
        raise EnumerationBudget(f"enumeration of ~{count_estimate:.3g} terms exceeds budget")
