"""Radial convolutions on R^d (d = 1, 2) and regular-variation diagnostics.

A d-convolution of radial densities F, G is reduced to one radial integral

    (F * G)(xi) = int_0^inf G(rho) rho^{d-1} K_F(rho, xi) d rho,

with K_F(rho, xi) = F(|rho - xi|) + F(rho + xi) for d = 1 and the angular
integral int_0^{2 pi} F(|rho e^{it} - xi|) dt for d = 2 (closed form through
2F1 when F is a pure power). Near rho = xi the kernel is split exactly into a
regular part plus |rho - xi|^e times a smooth part (the z -> 1 connection
formula of 2F1 in d = 2), so every singular endpoint sees an algebraic weight.
The tail is mapped to (0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import scipy.interpolate
import scipy.special

from .errors import QuadratureFailure, UnsupportedDimension

QUAD_REL = 1e-8
QUAD_FAIL = 1e-4


def _check_dim(d: int) -> None:
    if d not in (1, 2):
        raise UnsupportedDimension(f"dimension {d} is not supported (use 1 or 2)")


def ball_volume_factor(d: int) -> float:
    """Surface measure of the unit sphere in R^d: 2 for d = 1, 2 pi for d = 2."""
    _check_dim(d)
    return 2.0 if d == 1 else 2.0 * math.pi


class RadialDensity:
    """A positive radial function D(r) used as an integrand (typically 1/f)."""

    def __init__(self, fn: Callable, slope0: float, slope_inf: float, power: float | None = None,
                 label: str = "D"):
        self.fn = fn
        self.slope0 = float(slope0)
        self.slope_inf = float(slope_inf)
        self.power = power  # D(r) = r^power exactly when set
        self.label = label

    def __call__(self, r):
        return self.fn(r)


@dataclass(frozen=True)
class RadialFunction:
    """f(r) > 0 on (0, inf) with regular-variation index ``alpha`` at infinity."""

    fn: Callable
    alpha: float
    d: int
    index0: float = 0.0  # f(r) ~ r^index0 near 0
    pure_power: bool = False
    label: str = "f"

    def __post_init__(self):
        _check_dim(self.d)

    def __call__(self, r):
        return self.fn(r)

    @property
    def controllable(self) -> bool:
        """1/f integrable near the origin of R^d."""
        return self.index0 < self.d

    def inverse(self) -> RadialDensity:
        return RadialDensity(lambda r, f=self.fn: 1.0 / f(r), -self.index0, -self.alpha,
                             -self.alpha if self.pure_power else None, f"1/{self.label}")


def power_law(alpha: float, d: int) -> RadialFunction:
    return RadialFunction(lambda r, a=alpha: np.power(r, a), alpha, d, alpha, True, f"r^{alpha}")


def shifted_power(alpha: float, d: int) -> RadialFunction:
    """(1 + r)^alpha: index alpha at infinity, bounded at the origin."""
    return RadialFunction(lambda r, a=alpha: np.power(1.0 + r, a), alpha, d, 0.0, False, f"(1+r)^{alpha}")


@dataclass(frozen=True)
class RadialGrid:
    r_min: float
    r_max: float
    per_decade: int = 64

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if self.per_decade < 64:
            raise ValueError("use at least 64 points per decade")

    @property
    def points(self) -> np.ndarray:
        n = int(math.ceil(math.log10(self.r_max / self.r_min) * self.per_decade)) + 1
        return np.geomspace(self.r_min, self.r_max, n)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights in log r."""
        lr = np.log(self.points)
        w = np.zeros_like(lr)
        w[1:] += np.diff(lr) / 2
        w[:-1] += np.diff(lr) / 2
        return w


class TabulatedRadial(RadialDensity):
    """Cubic spline in log-log coordinates with power-law extrapolation at both ends.

    A spline rather than linear interpolation keeps the integrand smooth, which
    adaptive quadrature over many grid cells relies on.
    """

    def __init__(self, r: np.ndarray, values: np.ndarray, label: str = "tab", error: np.ndarray | None = None,
                 fit_points: int = 8):
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if np.any(np.diff(r) <= 0) or np.any(values <= 0):
            raise ValueError("table needs increasing radii and positive values")
        self.r, self.values = r, values
        self.error = error
        self.lr, self.lv = np.log(r), np.log(values)
        k = min(fit_points, len(r))
        s0 = np.polyfit(self.lr[:k], self.lv[:k], 1)[0]
        s1 = np.polyfit(self.lr[-k:], self.lv[-k:], 1)[0]
        self.spline = scipy.interpolate.CubicSpline(self.lr, self.lv)
        super().__init__(self._eval, s0, s1, None, label)

    def _eval(self, x):
        x = np.asarray(x, dtype=float)
        lx = np.log(x)
        out = self.spline(np.clip(lx, self.lr[0], self.lr[-1]))
        out = np.where(lx < self.lr[0], self.lv[0] + self.slope0 * (lx - self.lr[0]), out)
        out = np.where(lx > self.lr[-1], self.lv[-1] + self.slope_inf * (lx - self.lr[-1]), out)
        return np.exp(out)


def _as_density(f) -> RadialDensity:
    return f.inverse() if isinstance(f, RadialFunction) else f


# ---------------------------------------------------------------- d-convolution

def _angle_rule(panels: int = 40, nodes: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre on [0, pi] with panels graded geometrically towards 0.

    The angular integrand varies on the scale |rho - xi|/xi near t = 0, so the
    panels must reach far below any fixed resolution.
    """
    edges = np.concatenate([[0.0], np.geomspace(math.pi * 1e-12, math.pi, panels)])
    x, w = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    t = (a + (b - a) * (x + 1) / 2).ravel()
    wt = ((b - a) / 2 * w).ravel()
    return t, wt


_ANGLE_RULE = _angle_rule()


class _Kernel:
    """K_F(rho, xi) and its split near rho = xi as regular + |rho - xi|^e * smooth."""

    def __init__(self, F: RadialDensity, d: int, xi: float):
        self.F, self.d, self.xi = F, d, xi
        self.e = 0.0
        a = F.power
        if d == 1:
            if a is not None and a < 0:
                self.e = a
        elif a is not None:
            lam = -a / 2
            if abs((1 - 2 * lam) - round(1 - 2 * lam)) < 1e-12:
                raise QuadratureFailure("log-singular angular kernel (power -1) is not supported")
            self.e = 1 - 2 * lam
            g = scipy.special.gamma
            self.lam = lam
            self.A = g(1 - 2 * lam) / g(1 - lam) ** 2
            self.B = g(2 * lam - 1) / g(lam) ** 2
        elif F.slope0 < 0:
            raise QuadratureFailure("a singular non-power density cannot serve as the d=2 kernel")

    def total(self, rho: float) -> float:
        F, xi = self.F, self.xi
        if self.d == 1:
            return float(F(abs(rho - xi)) + F(rho + xi))
        if F.power is not None:
            a = F.power
            big, small = max(rho, xi), min(rho, xi)
            return 2 * math.pi * big**a * float(scipy.special.hyp2f1(-a / 2, -a / 2, 1.0, (small / big) ** 2))
        t, w = _ANGLE_RULE
        # 1 - cos t = 2 sin^2(t/2), kept exact for tiny angles
        r2 = (rho - xi) ** 2 + 4 * rho * xi * np.sin(t / 2) ** 2
        return 2.0 * float(w @ F(np.sqrt(r2)))

    def split(self, rho: float) -> tuple[float, float]:
        """(regular, smooth) with K = regular + |rho - xi|^e * smooth, for rho within a factor 2 of xi."""
        F, xi = self.F, self.xi
        if self.e == 0.0:
            return self.total(rho), 0.0
        if self.d == 1:
            return float(F(rho + xi)), 1.0
        big = max(rho, xi)
        w = abs(rho - xi) * (rho + xi) / big**2
        lam, hyp = self.lam, scipy.special.hyp2f1
        pre = 2 * math.pi * big ** F.power
        reg = pre * self.A * float(hyp(lam, lam, 2 * lam, w))
        smooth = pre * self.B * ((rho + xi) / big**2) ** self.e * float(hyp(1 - lam, 1 - lam, 2 - 2 * lam, w))
        return reg, smooth


def _qaws(fn, a, b, wl, wr):
    return scipy.integrate.quad(fn, a, b, weight="alg", wvar=(wl, wr), limit=200, epsabs=0.0, epsrel=QUAD_REL)


def convolve_at(F: RadialDensity, G: RadialDensity, d: int, xi: float) -> tuple[float, float]:
    """(F * G)(xi) and the summed quadrature error estimate."""
    K = _Kernel(F, d, xi)
    e0 = G.slope0 + d - 1
    if e0 <= -1:
        raise QuadratureFailure(f"{G.label} is not integrable at the origin of R^{d}")
    tail = -(G.slope_inf + F.slope_inf + d + 1)
    if tail <= -1:
        raise QuadratureFailure("the convolution integral diverges at infinity")
    gw = lambda rho: float(G(rho)) * rho ** (d - 1)
    opts = dict(limit=200, epsabs=0.0, epsrel=QUAD_REL)
    # QAWS samples the endpoints; the smooth factors are continuous there
    tiny = 1e-14
    near0 = lambda r: max(r, tiny * xi)
    pieces = [_qaws(lambda r: gw(near0(r)) * K.total(near0(r)) / near0(r) ** e0, 0.0, xi / 2, e0, 0.0)]
    for lo, hi, left in ((xi / 2, xi, False), (xi, 2 * xi, True)):
        pieces.append(scipy.integrate.quad(lambda r: gw(r) * K.split(r)[0], lo, hi, **opts))
        if K.e != 0.0:
            wv = (K.e, 0.0) if left else (0.0, K.e)
            pieces.append(_qaws(lambda r: gw(r) * K.split(r)[1], lo, hi, *wv))

    def far(u):
        # rho = 2 xi / u maps [2 xi, inf) to (0, 1]
        u = max(u, tiny)
        rho = 2 * xi / u
        return gw(rho) * K.total(rho) * 2 * xi / (u * u) / u**tail

    pieces.append(_qaws(far, 0.0, 1.0, tail, 0.0))
    val = sum(p[0] for p in pieces)
    err = sum(abs(p[1]) for p in pieces)
    return val, err


def d_convolve(f, g, d: int, grid: RadialGrid | Sequence[float], label: str = "conv") -> TabulatedRadial:
    """Tabulate xi -> int_{R^d} F(|eta - xi|) G(|eta|) d eta with F, G the inverse densities."""
    _check_dim(d)
    F, G = _as_density(f), _as_density(g)
    xs = grid.points if isinstance(grid, RadialGrid) else np.asarray(grid, dtype=float)
    vals = np.empty(len(xs))
    errs = np.empty(len(xs))
    for i, xi in enumerate(xs):
        vals[i], errs[i] = convolve_at(F, G, d, float(xi))
        if not np.isfinite(vals[i]) or errs[i] > QUAD_FAIL * abs(vals[i]):
            raise QuadratureFailure(f"quadrature error {errs[i]:.3g} too large at xi={xi:.4g}")
    return TabulatedRadial(xs, vals, label, errs)


def H_integral(h: RadialFunction, d: int, r: float) -> float:
    """(H(r))^{-1} = int_{|eta| <= r} h(|eta|)^{-1} d eta."""
    _check_dim(d)
    D = _as_density(h)
    e0 = D.slope0 + d - 1
    if e0 <= -1:
        raise QuadratureFailure("1/h is not integrable at the origin")
    val, err = _qaws(lambda s: float(D(max(s, 1e-14 * r))) * max(s, 1e-14 * r) ** (d - 1 - e0), 0.0, r, e0, 0.0)
    return ball_volume_factor(d) * val


def H_table(h: RadialFunction, d: int, xs: Sequence[float]) -> np.ndarray:
    return np.array([H_integral(h, d, float(x)) for x in xs])


def theta_k(h: RadialFunction, d: int, k: int, grid: RadialGrid | Sequence[float]) -> TabulatedRadial:
    """k-fold d-self-convolution of 1/h."""
    _check_dim(d)
    if k < 1:
        raise ValueError("k must be at least 1")
    if not d * (1 - 1 / k) < h.alpha <= d:
        raise ValueError(f"need d(1-1/k) < alpha <= d for k={k}")
    xs = grid.points if isinstance(grid, RadialGrid) else np.asarray(grid, dtype=float)
    base = h.inverse()
    if k == 1:
        return TabulatedRadial(xs, base(xs), "theta_1")
    cur = d_convolve(base, base, d, xs, "theta_2")
    for j in range(3, k + 1):
        cur = d_convolve(base, cur, d, xs, f"theta_{j}")
    return cur


@dataclass
class SlopeFit:
    slope: float
    stderr: float
    points: int


def rv_index(f, window: tuple[float, float]) -> SlopeFit:
    """Least-squares slope of log f against log r over the window."""
    if isinstance(f, TabulatedRadial):
        r, v = f.r, f.values
    else:
        r, v = (np.asarray(a, dtype=float) for a in f)
    lo, hi = window
    if lo < r[0] * (1 - 1e-12) or hi > r[-1] * (1 + 1e-12) or lo >= hi:
        raise ValueError("window must lie inside the tabulation")
    sel = (r >= lo * (1 - 1e-12)) & (r <= hi * (1 + 1e-12))
    x, y = np.log(r[sel]), np.log(v[sel])
    if x.size < 3:
        raise ValueError("need at least three points in the window")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    s2 = float(resid @ resid) / max(x.size - 2, 1)
    se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    return SlopeFit(float(coef[0]), se, int(x.size))


# ---------------------------------------------------------------- band checks

@dataclass
class RatioTable:
    name: str
    r: np.ndarray
    value: np.ndarray
    reference: np.ndarray
    band: tuple[float, float] | None = None
    spread_limit: float | None = None
    notes: list = field(default_factory=list)

    @property
    def ratio(self) -> np.ndarray:
        return self.value / self.reference

    @property
    def spread(self) -> float:
        return float(self.ratio.max() / self.ratio.min())

    @property
    def passed(self) -> bool:
        ok = bool(np.all(np.isfinite(self.ratio)) and np.all(self.ratio > 0))
        if self.band is not None:
            ok &= bool(self.ratio.min() >= self.band[0] and self.ratio.max() <= self.band[1])
        if self.spread_limit is not None:
            ok &= self.spread <= self.spread_limit
        return ok

    def rows(self) -> list[tuple[float, float, float, float]]:
        return list(zip(self.r.tolist(), self.value.tolist(), self.reference.tolist(), self.ratio.tolist()))


def write_csv(path, table: RatioTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["radius", "value", "reference", "ratio"])
        for row in table.rows():
            w.writerow([f"{v:.12g}" for v in row])


def two_term_check(h: RadialFunction, g: RadialFunction, d: int, xs: Sequence[float],
                   band=(0.1, 10.0)) -> RatioTable:
    """d_convolve(h, g) against h^{-1} G^{-1} + g^{-1} H^{-1}."""
    xs = np.asarray(xs, dtype=float)
    conv = d_convolve(h, g, d, xs)
    ref = (1.0 / h(xs)) * H_table(g, d, xs) + (1.0 / g(xs)) * H_table(h, d, xs)
    return RatioTable(f"two_term d={d} {h.label}*{g.label}", xs, conv.values, ref, band)


def ball_growth_check(h: RadialFunction, d: int, xs: Sequence[float], spread_limit: float = 9.0) -> RatioTable:
    """H^{-1}(r) against r^d h^{-1}(r): bounded above and below by constants.

    The limit is on max/min of the ratio, a band of fixed width whose position
    is the (shape dependent) constant.
    """
    xs = np.asarray(xs, dtype=float)
    return RatioTable(f"ball_growth d={d} {h.label}", xs, H_table(h, d, xs), xs**d / h(xs), None, spread_limit)


def theta_ratio_check(h: RadialFunction, d: int, k: int, theta: TabulatedRadial, xs: Sequence[float],
                      band=(0.1, 10.0)) -> RatioTable:
    """theta_k against h^{-1} (H^{-1})^{k-1}."""
    xs = np.asarray(xs, dtype=float)
    ref = (1.0 / h(xs)) * H_table(h, d, xs) ** (k - 1)
    return RatioTable(f"theta_ratio d={d} k={k} {h.label}", xs, theta(xs), ref, band)


def gaussian_profile(x):
    return np.exp(-0.5 * np.asarray(x, dtype=float) ** 2)


def _radial_integral(D: Callable, d: int, weight: Callable, slope0: float, scale: float) -> float:
    """int_{R^d} D(|s|) weight(|s|) ds for a rapidly decaying weight."""
    e0 = slope0 + d - 1
    body = lambda s: float(D(s)) * float(weight(s)) * s ** (d - 1)
    # split at the weight's own scale so each piece is well resolved
    cut = scale
    a, _ = _qaws(lambda s: body(max(s, 1e-14 * cut)) / max(s, 1e-14 * cut) ** e0, 0.0, cut, e0, 0.0)
    b, _ = scipy.integrate.quad(body, cut, 20 * cut, limit=400, epsabs=0.0, epsrel=QUAD_REL)
    return ball_volume_factor(d) * (a + b)


def chain_growth_check(h: RadialFunction, d: int, k: int, rs: Sequence[float], theta: TabulatedRadial | None = None,
                       band=(0.1, 10.0)) -> RatioTable:
    """Chain proxies against (H^{-1}(1/r))^k with a Gaussian profile.

    k = 1: int h^{-1}(|x|) |f^(r x)| dx.  k >= 2: int theta_k(|s|) |f^(r s)|^2 ds.
    """
    rs = np.asarray(rs, dtype=float)
    vals = []
    for r in rs:
        if k == 1:
            D = h.inverse()
            vals.append(_radial_integral(D, d, lambda s, r=r: gaussian_profile(r * s), D.slope0, 1.0 / r))
        else:
            if theta is None:
                raise ValueError("theta_k table required for k >= 2")
            vals.append(_radial_integral(theta, d, lambda s, r=r: gaussian_profile(r * s) ** 2, theta.slope0, 1.0 / r))
    ref = np.array([H_integral(h, d, 1.0 / r) ** k for r in rs])
    return RatioTable(f"chain_growth d={d} k={k} {h.label}", rs, np.array(vals), ref, band)


def riesz_constant(a: float, b: float, d: int) -> float:
    """int_{R^d} |e - s|^{-a} |s|^{-b} ds for a unit vector e (closed form)."""
    _check_dim(d)
    if d == 1:
        B = scipy.special.beta
        return float(B(1 - a, 1 - b) + B(1 - a, a + b - 1) + B(1 - b, a + b - 1))
    g = scipy.special.gamma
    return float(math.pi ** (d / 2) * g((d - a) / 2) * g((d - b) / 2) * g((a + b - d) / 2)
                 / (g(a / 2) * g(b / 2) * g(d - (a + b) / 2)))
