"""Monte Carlo plumbing: mergeable estimators, seeded shards, comparison rows.

Every check owns a stream derived from (seed, crc32(check name)); each shard
of a check gets a spawned child of that stream and a Philox generator, so the
merged statistics do not depend on the thread count.
"""

from __future__ import annotations

import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.integrate

from .errors import BudgetTooSmall, InfiniteMass
from .loops import LoopMeasure, OccupationPolynomial

DEFAULT_CHUNK = 50_000
Z_THRESHOLD = 4.0


@dataclass
class Estimator:
    name: str = ""
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    target: float | None = None
    batch_means: list = field(default_factory=list)

    @classmethod
    def from_values(cls, values, name: str = "", target: float | None = None) -> "Estimator":
        est = cls(name=name, target=target)
        est.add(values)
        return est

    def add(self, values) -> None:
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return
        other = Estimator(count=v.size, mean=float(v.mean()), m2=float(((v - v.mean()) ** 2).sum()))
        self._combine(other)
        self.batch_means.append(other.mean)

    def merge(self, other: "Estimator") -> None:
        self._combine(other)
        self.batch_means.extend(other.batch_means)

    def _combine(self, o: "Estimator") -> None:
        # Chan et al. pairwise update
        if o.count == 0:
            return
        n = self.count + o.count
        d = o.mean - self.mean
        self.mean += d * o.count / n
        self.m2 += o.m2 + d * d * self.count * o.count / n
        self.count = n

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else float("nan")

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else float("inf")

    def z(self, target: float | None = None) -> float:
        t = self.target if target is None else target
        if t is None:
            raise ValueError("no target to compare against")
        se = self.stderr
        if se == 0:
            return 0.0 if self.mean == t else math.copysign(math.inf, self.mean - t)
        return (self.mean - t) / se


def two_sample_z(a: Estimator, b: Estimator) -> float:
    se = math.hypot(a.stderr, b.stderr)
    if se == 0:
        return 0.0 if a.mean == b.mean else math.inf
    return (a.mean - b.mean) / se


@dataclass
class ComparisonRow:
    name: str
    kind: str
    passed: bool
    exact: float | None = None
    estimate: float | None = None
    stderr: float | None = None
    z: float | None = None
    residual: float | None = None
    samples: int = 0
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.generic):
                v = v.item()
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            return v

        out = {
            "name": self.name,
            "kind": self.kind,
            "exact": clean(self.exact),
            "estimate": clean(self.estimate),
            "stderr": clean(self.stderr),
            "z": clean(self.z),
            "residual": clean(self.residual),
            "pass": bool(self.passed),
            "samples": int(self.samples),
            "seconds": round(float(self.seconds), 3),
        }
        if self.detail:
            out["detail"] = {k: clean(v) for k, v in self.detail.items()}
        return out


def estimate_row(name: str, est: Estimator, exact: float, seconds: float = 0.0,
                 threshold: float = Z_THRESHOLD, **detail) -> ComparisonRow:
    z = est.z(exact)
    return ComparisonRow(name, "estimate", abs(z) <= threshold, exact, est.mean, est.stderr, z,
                         samples=est.count, seconds=seconds, detail=detail)


def residual_row(name: str, residual: float, tol: float, samples: int = 0, seconds: float = 0.0,
                 **detail) -> ComparisonRow:
    return ComparisonRow(name, "identity", bool(residual <= tol), residual=residual, samples=samples,
                         seconds=seconds, detail={"tolerance": tol, **detail})


def check_budget_scale(est: Estimator, scale: float, frac: float = 0.1) -> None:
    if not est.count or est.stderr > frac * max(abs(scale), 1e-300):
        raise BudgetTooSmall(f"{est.name}: standard error {est.stderr:.3g} exceeds {frac:.0%} of {scale:.3g}")


# ---------------------------------------------------------------- shards

def stream_for(seed: int, key: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(key.encode())])


def run_sharded(task: Callable[[np.random.Generator, int], dict], total: int, seed: int, key: str,
                chunk: int = DEFAULT_CHUNK, threads: int = 1) -> dict[str, Estimator]:
    """Run task(rng, n) over ceil(total/chunk) shards and merge per-name estimators in shard order."""
    if total <= 0:
        return {}
    sizes = [chunk] * (total // chunk) + ([total % chunk] if total % chunk else [])
    children = stream_for(seed, key).spawn(len(sizes))

    def one(i):
        rng = np.random.Generator(np.random.Philox(children[i]))
        return task(rng, sizes[i])

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    else:
        parts = [one(i) for i in range(len(sizes))]
    merged: dict[str, Estimator] = {}
    for part in parts:
        for name, vals in part.items():
            merged.setdefault(name, Estimator(name=name)).add(vals)
    return merged


# ---------------------------------------------------------------- loop-measure oracle

def _trivial_stratum(measure: LoopMeasure, poly: OccupationPolynomial) -> float:
    """Exact mu of poly restricted to one-point loops, by quadrature of t^{j-1} e^{-q t}."""
    tot = 0.0
    for e, c in poly.terms.items():
        sites = [x for x, p in enumerate(e) if p]
        if not sites:
            raise InfiniteMass("constant term has infinite loop-measure mass")
        if len(sites) > 1:
            continue
        x, j = sites[0], e[sites[0]]
        q = float(measure.kernel.exit_rate[x])
        val, _ = scipy.integrate.quad(lambda t: t ** (j - 1) * math.exp(-q * t), 0.0, np.inf)
        tot += c * val
    return tot


def loop_stratum_oracle(measure: LoopMeasure, functional: OccupationPolynomial, budget: int,
                        rng: np.random.Generator, target: float | None = None) -> Estimator:
    """Stratified estimate of mu(functional): exact trivial stratum plus sampled skeleton loops."""
    return loop_stratum_oracles(measure, [functional], budget, rng, [target])[0]


def loop_stratum_oracles(measure: LoopMeasure, functionals, budget: int, rng: np.random.Generator,
                         targets=None) -> list[Estimator]:
    """Several functionals estimated on one shared skeleton sample."""
    targets = targets or [None] * len(functionals)
    bases = [_trivial_stratum(measure, f) for f in functionals]
    ests = [Estimator(name=repr(f), target=t) for f, t in zip(functionals, targets)]
    mass = measure.jump_mass
    if mass <= 0:
        for est, base in zip(ests, bases):
            est.add(np.full(max(budget, 2), base))
        return ests
    done = 0
    while done < budget:
        n = min(DEFAULT_CHUNK, budget - done)
        occ, _ = measure.sample_skeletons(n, rng)
        for est, base, f in zip(ests, bases, functionals):
            est.add(base + mass * f.evaluate(occ))
        done += n
    return ests


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
