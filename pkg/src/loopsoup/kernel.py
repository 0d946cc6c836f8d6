"""Finite-state killed continuous-time Markov chains and their Green matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NegativeRate, SingularGenerator


@dataclass(frozen=True, eq=False)
class MarkovKernel:
    """Killed chain with generator Q.

    Off-diagonal Q(x,y) are jump rates, -Q(x,x) is the total exit rate and
    the row deficit is the killing rate. ``green`` is u = (-Q)^{-1}.
    """

    rates: np.ndarray
    exit_rate: np.ndarray
    kill_rate: np.ndarray
    jump_chain: np.ndarray
    green: np.ndarray
    jump_green: np.ndarray = field(repr=False)

    @property
    def num_states(self) -> int:
        return self.rates.shape[0]

    @property
    def jump_mass(self) -> float:
        """-log det(I - P_J), the total mass of loops with at least one jump."""
        sign, logdet = np.linalg.slogdet(np.eye(self.num_states) - self.jump_chain)
        return float(-logdet)

    def same_as(self, other: "MarkovKernel") -> bool:
        return self is other or (
            self.rates.shape == other.rates.shape and np.array_equal(self.rates, other.rates)
        )


def build_kernel(rates) -> MarkovKernel:
    Q = np.array(rates, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] == 0:
        raise ValueError("rate matrix must be square and non-empty")
    m = Q.shape[0]
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        raise NegativeRate("off-diagonal rates must be non-negative")
    exit_rate = -np.diag(Q).copy()
    if np.any(exit_rate <= 0):
        raise SingularGenerator("every state needs a positive exit rate")
    kill = exit_rate - off.sum(axis=1)
    # tolerate round-off in user supplied rows
    scale = np.maximum(exit_rate, 1.0)
    if np.any(kill < -1e-12 * scale):
        raise ValueError("diagonal must not exceed minus the off-diagonal row sum")
    kill = np.where(kill < 0, 0.0, kill)
    if kill.sum() <= 0:
        raise SingularGenerator("no killing anywhere: -Q is not invertible")
    P = off / exit_rate[:, None]
    eye = np.eye(m)
    try:
        lu = scipy.linalg.lu_factor(-Q, check_finite=True)
        u = scipy.linalg.lu_solve(lu, eye)
        G = scipy.linalg.lu_solve(scipy.linalg.lu_factor(eye - P), eye)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularGenerator(str(exc)) from exc
    if not np.all(np.isfinite(u)) or np.max(np.abs(np.linalg.eigvals(P))) >= 1.0:
        raise SingularGenerator("jump chain is not transient; some states never get killed")
    for arr in (Q, exit_rate, kill, P, u, G):
        arr.setflags(write=False)
    return MarkovKernel(Q, exit_rate, kill, P, u, G)


def example_kernel() -> MarkovKernel:
    """The default 2-state non-symmetric fixture."""
    return build_kernel([[-1.0, 0.5], [0.25, -1.0]])


def random_kernel(m: int, seed: int, kill: float = 0.3) -> MarkovKernel:
    """A dense random kernel with every state killed at rate ``kill``."""
    rng = np.random.default_rng(seed)
    off = rng.uniform(0.2, 1.0, size=(m, m))
    np.fill_diagonal(off, 0.0)
    Q = off - np.diag(off.sum(axis=1) + kill)
    return build_kernel(Q)


@dataclass
class KilledPath:
    states: np.ndarray
    durations: np.ndarray

    def occupation(self, m: int) -> np.ndarray:
        return np.bincount(self.states, weights=self.durations, minlength=m)


def _jump_table(kernel: MarkovKernel) -> np.ndarray:
    # columns 0..m-1 jump targets, column m is killing
    m = kernel.num_states
    probs = np.zeros((m, m + 1))
    probs[:, :m] = kernel.jump_chain
    probs[:, m] = kernel.kill_rate / kernel.exit_rate
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    return cum


def simulate_path(kernel: MarkovKernel, start: int, rng: np.random.Generator) -> KilledPath:
    m = kernel.num_states
    if not 0 <= start < m:
        raise ValueError("start state out of range")
    cum = _jump_table(kernel)
    states, durs = [], []
    x = start
    while x < m:
        states.append(x)
        durs.append(rng.exponential(1.0 / kernel.exit_rate[x]))
        x = int(np.searchsorted(cum[x], rng.random(), side="right"))
    return KilledPath(np.array(states, dtype=np.int64), np.array(durs))


def simulate_occupations(
    kernel: MarkovKernel, start: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Total time spent in each state by ``n`` independent paths from ``start``."""
    m = kernel.num_states
    cum = _jump_table(kernel)
    occ = np.zeros((n, m))
    idx = np.arange(n)
    cur = np.full(n, start, dtype=np.int64)
    inv_rate = 1.0 / kernel.exit_rate
    while idx.size:
        hold = rng.exponential(1.0, size=idx.size) * inv_rate[cur]
        occ[idx, cur] += hold
        r = rng.random(idx.size)
        nxt = (r[:, None] >= cum[cur]).sum(axis=1)
        alive = nxt < m
        idx, cur = idx[alive], nxt[alive]
    return occ
