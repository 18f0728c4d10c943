"""Delta-calculus on time scales: circle algebra, derivative, integral, exponential."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.integrate import simpson

from .expr import CoefficientExpr
from .timescale import ATOL, NotInTimeScale, TimeScale, Timeline


class RegressivityError(ArithmeticError):
    pass


class CoverageError(ValueError):
    """A grid function was queried where it has no data."""


# -- circle algebra ----------------------------------------------------------------

def circle_plus(p, q, mu):
    """``p ⊕ q = p + q + mu*p*q``."""
    return p + q + mu * p * q


def circle_neg(p, mu):
    """``⊖p = -p / (1 + mu*p)``."""
    d = 1.0 + np.multiply(mu, p)
    if np.any(d == 0.0):
        raise RegressivityError(f"1 + mu*p = 0 for p={p!r}, mu={mu!r}")
    return -p / d


def circle_minus(p, q, mu):
    return circle_plus(p, circle_neg(q, mu), mu)


def cylinder(z, mu):
    """Cylinder transform ``log(1 + mu*z)/mu`` (``z`` when ``mu == 0``)."""
    z = np.asarray(z, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), z.shape)
    arg = 1.0 + mu * z
    if np.any((mu > 0) & (arg <= 0)):
        raise RegressivityError("1 + mu*p <= 0: exponential is not real-valued")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(mu > 0, np.log(np.where(mu > 0, arg, 1.0)) / np.where(mu > 0, mu, 1.0), z)
    return out


# -- coefficient adapters --------------------------------------------------------

class MuDependent:
    """Coefficient whose value depends on the local graininess, ``p(t, mu)``."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        self.fn = fn

    def __call__(self, t, mu):
        return self.fn(t, mu)


Coefficient = Union[CoefficientExpr, float, Callable, MuDependent]


def _vec(p: Coefficient) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Normalise ``p`` to a vectorised ``(t, mu) -> values`` function."""
    if isinstance(p, MuDependent):
        return lambda t, mu: np.broadcast_to(np.asarray(p(t, mu), dtype=float), np.shape(t))
    if isinstance(p, CoefficientExpr):
        return lambda t, mu: p.eval_many(t)
    if isinstance(p, (int, float, np.floating)):
        c = float(p)
        return lambda t, mu: np.full(np.shape(t), c)
    if callable(p):
        def f(t, mu):
            try:
                v = np.asarray(p(t), dtype=float)
            except TypeError:
                v = np.array([p(float(x)) for x in np.ravel(t)], dtype=float).reshape(np.shape(t))
            return np.broadcast_to(v, np.shape(t))
        return f
    raise TypeError(f"unsupported coefficient {p!r}")


def ominus(p: Coefficient) -> MuDependent:
    """Pointwise ``⊖p`` using the local graininess."""
    f = _vec(p)
    return MuDependent(lambda t, mu: circle_neg(f(t, mu), mu))


def oplus(p: Coefficient, q: Coefficient) -> MuDependent:
    f, g = _vec(p), _vec(q)
    return MuDependent(lambda t, mu: circle_plus(f(t, mu), g(t, mu), mu))


# -- regressivity ------------------------------------------------------------------

@dataclass(frozen=True)
class RegressivityReport:
    regressive: bool
    positively_regressive: bool
    min_over_window: float
    witness_t: float


def is_regressive(p: Coefficient, ts: TimeScale, samples: int | None = None,
                  tol: float = 1e-12) -> RegressivityReport:
    pts = ts.sample_points(samples=samples)
    mu = ts.graininess_many(pts)
    vals = 1.0 + mu * _vec(p)(pts, mu)
    i = int(np.argmin(vals))
    j = int(np.argmin(np.abs(vals)))
    return RegressivityReport(
        regressive=bool(np.abs(vals[j]) > tol),
        positively_regressive=bool(vals[i] > tol),
        min_over_window=float(vals[i]),
        witness_t=float(pts[i] if vals[i] <= abs(vals[j]) else pts[j]),
    )


# -- grid functions ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of an rd-continuous function on nodes of a time scale.

    Values are interpolated linearly inside a continuous component; between
    different components only the exact nodes are defined.
    """

    ts: TimeScale
    t: np.ndarray
    values: np.ndarray
    meta: dict | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or len(t) != len(v):
            raise ValueError("nodes and values must have matching first dimension")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("node times must be strictly increasing")
        if not np.all(self.ts.contains_many(t)):
            raise NotInTimeScale("grid nodes must lie in the time scale")
        comp = np.searchsorted(self.ts.intervals[:, 0], t + ATOL, side="right") - 1
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_comp", comp)
        if self.meta is None:
            object.__setattr__(self, "meta", {})

    @classmethod
    def sample(cls, ts: TimeScale, f: Coefficient, per_unit: float = 64.0,
               nodes: np.ndarray | None = None) -> "GridFunction":
        t = ts.sample_points(per_unit=per_unit) if nodes is None else np.asarray(nodes, float)
        if isinstance(f, MuDependent):
            vals = f(t, ts.graininess_many(t))
        else:
            vals = _vec(f)(t, np.zeros_like(t))
        return cls(ts, t, np.array(vals, dtype=float))

    def __len__(self) -> int:
        return len(self.t)

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def _bracket(self, u: float) -> tuple[int, int, float]:
        i = int(np.searchsorted(self.t, u - ATOL))
        if i < len(self.t) and abs(self.t[i] - u) <= ATOL:
            return i, i, 0.0
        if i == 0 or i == len(self.t):
            raise CoverageError(f"t={u!r} is outside the grid [{self.start}, {self.end}]")
        if self._comp[i - 1] != self._comp[i]:
            raise CoverageError(f"t={u!r} falls in a gap of the grid")
        lo, hi = self.t[i - 1], self.t[i]
        return i - 1, i, (u - lo) / (hi - lo)

    def __call__(self, u: float):
        u = float(u)
        if not self.ts.contains(u):
            raise NotInTimeScale(f"{u!r} is not in the time scale")
        i, j, w = self._bracket(u)
        if i == j:
            return self.values[i]
        return (1.0 - w) * self.values[i] + w * self.values[j]

    def at_many(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        j = np.searchsorted(self.t, u - ATOL)
        jc = np.clip(j, 0, len(self.t) - 1)
        exact = np.abs(self.t[jc] - u) <= ATOL
        inside = (j > 0) & (j < len(self.t))
        jm = np.clip(j - 1, 0, len(self.t) - 1)
        same = inside & (self._comp[jm] == self._comp[jc])
        if not np.all(exact | same):
            bad = u[~(exact | same)][0]
            raise CoverageError(f"t={bad!r} is outside the grid or in a gap")
        den = np.where(same, self.t[jc] - self.t[jm], 1.0)
        w = np.where(exact, 1.0, (u - self.t[jm]) / den)
        shape = (-1,) + (1,) * (self.values.ndim - 1)
        w = w.reshape(shape)
        return (1.0 - w) * self.values[jm] + w * self.values[jc]

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return GridFunction(self.ts, self.t, fn(self.values), dict(self.meta))

    def sup_norm(self) -> float:
        v = self.values.reshape(len(self.t), -1)
        return float(np.max(np.abs(v))) if v.size else 0.0


# -- derivative ----------------------------------------------------------------------

def _fd_step(t: float) -> float:
    return max(1e-6, 1e-8 * abs(t))


def delta_derivative(f: GridFunction | Callable, t: float, ts: TimeScale | None = None):
    """Delta derivative at ``t``.

    Right-scattered points use the exact jump quotient.  At right-dense points
    a grid function uses the three-point formula on its neighbouring nodes;
    a callable uses central differences with step ``max(1e-6, 1e-8|t|)``.
    Both fall back to one-sided differences at component edges.
    """
    t = float(t)
    if isinstance(f, GridFunction):
        ts = f.ts
    elif ts is None:
        raise TypeError("a callable needs its time scale")
    s = ts.sigma(t)
    if s > t:
        return (f(s) - f(t)) / (s - t)
    i = ts._locate(t)
    lo, hi = ts.intervals[i]
    if hi - lo <= ATOL:
        raise CoverageError(f"no dense neighbourhood at window edge t={t!r}")
    if not isinstance(f, GridFunction):
        h = _fd_step(t)
        if t - h >= lo - ATOL and t + h <= hi + ATOL:
            return (f(t + h) - f(t - h)) / (2 * h)
        if t + h <= hi + ATOL:
            return (f(t + h) - f(t)) / h
        return (f(t) - f(t - h)) / h
    k, k2, w = f._bracket(t)
    if k != k2:
        return (f.values[k2] - f.values[k]) / (f.t[k2] - f.t[k])
    has_l = k > 0 and f._comp[k - 1] == f._comp[k]
    has_r = k + 1 < len(f.t) and f._comp[k + 1] == f._comp[k]
    if has_l and has_r:
        h1 = f.t[k] - f.t[k - 1]
        h2 = f.t[k + 1] - f.t[k]
        return (-h2 / (h1 * (h1 + h2)) * f.values[k - 1]
                + (h2 - h1) / (h1 * h2) * f.values[k]
                + h1 / (h2 * (h1 + h2)) * f.values[k + 1])
    if has_r:
        return (f.values[k + 1] - f.values[k]) / (f.t[k + 1] - f.t[k])
    if has_l:
        return (f.values[k] - f.values[k - 1]) / (f.t[k] - f.t[k - 1])
    raise CoverageError(f"no dense neighbourhood at t={t!r}")


# -- integral ------------------------------------------------------------------------

def _pieces(ts: TimeScale, a: float, b: float):
    """Scattered points in ``[a, b)`` with their graininess, and dense segments."""
    iv = ts.intervals
    his = iv[:-1, 1]
    mus = iv[1:, 0] - iv[:-1, 1]
    sel = (his >= a - ATOL) & (his < b - ATOL)
    segs = []
    for lo, hi in iv:
        l, h = max(lo, a), min(hi, b)
        if h - l > ATOL:
            segs.append((float(l), float(h)))
    return his[sel], mus[sel], segs


def _adaptive_simpson(fv: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                      tol: float = 1e-10, n0: int = 16, max_n: int = 1 << 20):
    n = n0
    x = np.linspace(lo, hi, 2 * n + 1)
    y = fv(x)
    prev = None
    while True:
        h = (hi - lo) / (2 * n)
        s = h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum(axis=0) + 2.0 * y[2:-1:2].sum(axis=0))
        if prev is not None and np.max(np.abs(s - prev)) <= 15 * tol:
            return s + (s - prev) / 15.0
        if 2 * n >= max_n:
            return s
        prev = s
        xm = 0.5 * (x[:-1] + x[1:])
        ym = fv(xm)
        ynew = np.empty((len(x) + len(xm),) + y.shape[1:])
        ynew[0::2] = y
        ynew[1::2] = ym
        xnew = np.empty(len(x) + len(xm))
        xnew[0::2] = x
        xnew[1::2] = xm
        x, y, n = xnew, ynew, 2 * n


def delta_integral(f: GridFunction | Coefficient, a: float, b: float,
                   ts: TimeScale | None = None, tol: float = 1e-10):
    """``∫_a^b f Δt``: ``sum mu(s) f(s)`` over scattered ``s`` plus Simpson on dense parts.

    ``f`` is a :class:`GridFunction` (Simpson on its nodes) or a coefficient
    evaluated on demand (adaptive Simpson to ``tol`` per segment).
    """
    a, b = float(a), float(b)
    if isinstance(f, GridFunction):
        ts = f.ts
    elif ts is None:
        raise TypeError("a coefficient needs its time scale")
    if a > b:
        raise ValueError("need a <= b")
    for e in (a, b):
        if not ts.contains(e):
            raise NotInTimeScale(f"endpoint {e!r} is not in the time scale")
    if b - a <= ATOL:
        if isinstance(f, GridFunction):
            return np.zeros(f.values.shape[1:]) if f.values.ndim > 1 else 0.0
        return 0.0
    pts, mus, segs = _pieces(ts, a, b)
    if isinstance(f, GridFunction):
        if a < f.start - ATOL or b > f.end + ATOL:
            raise CoverageError(f"grid [{f.start}, {f.end}] does not cover [{a}, {b}]")
        if len(pts):
            vals = f.at_many(pts)
            total = np.tensordot(mus, vals, axes=(0, 0))
        else:
            total = np.zeros(f.values.shape[1:])
        for lo, hi in segs:
            inner = (f.t > lo + ATOL) & (f.t < hi - ATOL)
            x = np.concatenate([[lo], f.t[inner], [hi]])
            y = np.concatenate([f.at_many([lo]), f.values[inner], f.at_many([hi])])
            total = total + simpson(y, x=x, axis=0)
        return float(total) if np.ndim(total) == 0 else total
    fv = _vec(f)
    total = math.fsum(mus * fv(pts, mus)) if len(pts) else 0.0
    for lo, hi in segs:
        total += float(_adaptive_simpson(lambda x: fv(x, np.zeros_like(x)), lo, hi, tol))
    return total


# -- exponential -----------------------------------------------------------------------

def exp_exponent(p: Coefficient, ts: TimeScale, t: float, s: float, tol: float = 1e-12) -> float:
    """``log e_p(t, s)`` for ``s <= t``."""
    pts, mus, segs = _pieces(ts, s, t)
    fv = _vec(p)
    total = 0.0
    if len(pts):
        vals = fv(pts, mus)
        arg = 1.0 + mus * vals
        if np.any(arg <= 0):
            w = pts[np.argmax(arg <= 0)]
            raise RegressivityError(f"1 + mu*p <= 0 at t={w!r}")
        total = math.fsum(np.log(arg))
    for lo, hi in segs:
        total += float(_adaptive_simpson(lambda x: fv(x, np.zeros_like(x)), lo, hi, tol))
    return total


def ts_exp(p: Coefficient, ts: TimeScale, t: float, s: float) -> float:
    """Generalised exponential ``e_p(t, s)``; ``t < s`` uses ``1/e_p(s, t)``."""
    t, s = float(t), float(s)
    for e in (t, s):
        if not ts.contains(e):
            raise NotInTimeScale(f"{e!r} is not in the time scale")
    if t < s:
        return 1.0 / ts_exp(p, ts, s, t)
    return math.exp(exp_exponent(p, ts, t, s))


def log_exp_table(p: Coefficient, line: Timeline) -> np.ndarray:
    """Cumulative ``log e_p(t_i, t_0)`` on every node of a timeline.

    Dense steps use Simpson on ``[t_i, t_{i+1}]`` with the midpoint value.
    """
    fv = _vec(p)
    t, mu = line.t, line.mu
    inc = np.zeros(len(t))
    if len(t) > 1:
        h = np.diff(t)
        d = line.dense[:-1]
        pa = fv(t[:-1], np.where(d, 0.0, mu[:-1]))
        if np.any(~d):
            arg = 1.0 + mu[:-1][~d] * pa[~d]
            if np.any(arg <= 0):
                raise RegressivityError("1 + mu*p <= 0 on the timeline")
            inc[1:][~d] = np.log(arg)
        if np.any(d):
            ta, tb = t[:-1][d], t[1:][d]
            z = np.zeros_like(ta)
            pm = fv(0.5 * (ta + tb), z)
            pb = fv(tb, z)
            inc[1:][d] = h[d] / 6.0 * (pa[d] + 4.0 * pm + pb)
    return np.cumsum(inc)
