"""Finite-data almost-automorphy testing.

A verdict is evidence at resolution ``epsilon`` over a declared candidate
pool: from the pool a subsequence ``s_n`` is extracted greedily so that the
translates ``f(t + s_n)`` are pairwise within ``epsilon/2`` on a core set; the
limit ``f̄`` is their average, and the back-translates ``f̄(t - s_n)`` must
return to ``f(t)`` within ``epsilon``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .calculus import CoverageError, GridFunction
from .expr import CoefficientExpr
from .timescale import ATOL, Generator, TimeScale, TranslationSet, make_timescale


class CandidateError(ValueError):
    """Too few candidate translations survive domain filtering."""


@dataclass
class AutomorphyVerdict:
    passed: bool
    epsilon: float
    limit_function: GridFunction | None
    subsequence: list[float]
    max_forward_residual: float
    max_backward_residual: float
    reason: str = ""
    usable: int = 0


# -- evaluation helpers ----------------------------------------------------------

def _evaluator(f) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(f, GridFunction):
        return f.at_many
    if isinstance(f, CoefficientExpr):
        return f.eval_many
    return lambda t: np.asarray(f(np.asarray(t, dtype=float)), dtype=float)


def _covers(f, u: np.ndarray) -> bool:
    if not isinstance(f, GridFunction):
        return True
    if u.min() < f.start - ATOL or u.max() > f.end + ATOL:
        return False
    return bool(np.all(f.ts.contains_many(u)))


def _core_points(core: TimeScale | np.ndarray, samples: int | None) -> np.ndarray:
    if isinstance(core, TimeScale):
        if samples is None:
            return core.sample_points(per_unit=16)
        return core.sample_points(samples=samples)
    return np.asarray(core, dtype=float)


def test_almost_automorphic(f, candidates: TranslationSet | Sequence[float],
                            core: TimeScale | np.ndarray, epsilon: float, *,
                            min_kept: int = 3, range_cap: float = 1e6,
                            core_samples: int | None = None) -> AutomorphyVerdict:
    """Greedy Cauchy-style almost-automorphy test of ``f`` on ``core``.

    ``f`` is a :class:`GridFunction` or a vectorised callable.  Candidates
    whose translates leave the grid are dropped; fewer than two usable ones
    is an error.  With fewer than ``min_kept`` kept translates the residuals
    are reported as infinite.
    """
    taus = list(candidates.taus if isinstance(candidates, TranslationSet) else candidates)
    pts = _core_points(core, core_samples)
    ev = _evaluator(f)
    usable = [s for s in taus if _covers(f, pts + s)]
    if len(usable) < 2:
        raise CandidateError(f"only {len(usable)} usable candidate translations")
    base = ev(pts)
    if np.max(np.abs(base)) > range_cap:
        return AutomorphyVerdict(False, epsilon, None, [], math.inf, math.inf,
                                 "range cap exceeded", len(usable))
    kept: list[float] = []
    rows: list[np.ndarray] = []
    for s in usable:
        v = ev(pts + s)
        if np.max(np.abs(v)) > range_cap:
            return AutomorphyVerdict(False, epsilon, None, kept, math.inf, math.inf,
                                     "range cap exceeded", len(usable))
        if all(np.max(np.abs(v - r)) <= 0.5 * epsilon for r in rows):
            kept.append(s)
            rows.append(v)
    fbar = np.mean(rows, axis=0)
    limit_ts = core if isinstance(core, TimeScale) else None
    limit = GridFunction(limit_ts, pts, fbar) if limit_ts is not None else None
    if len(kept) < min_kept:
        return AutomorphyVerdict(False, epsilon, limit, kept, math.inf, math.inf,
                                 f"only {len(kept)} mutually close translates", len(usable))
    fwd = max(float(np.max(np.abs(r - fbar))) for r in rows)
    # f̄(t - s_n) = mean_k f(t - s_n + s_k)
    bwd = 0.0
    for sn in kept:
        acc = np.zeros_like(base)
        ok = np.ones(len(pts), dtype=bool)
        for sk in kept:
            u = pts - sn + sk
            if isinstance(f, GridFunction):
                inside = (u >= f.start - ATOL) & (u <= f.end + ATOL)
                inside &= f.ts.contains_many(np.clip(u, f.start, f.end))
                ok &= inside
                vals = np.zeros(len(u))
                if np.any(inside):
                    vals[inside] = ev(u[inside])
            else:
                vals = ev(u)
            acc += vals
        if not np.any(ok):
            raise CoverageError("grid does not cover any back-translated core point")
        bwd = max(bwd, float(np.max(np.abs(acc[ok] / len(kept) - base[ok]))))
    passed = fwd <= epsilon and bwd <= epsilon
    return AutomorphyVerdict(passed, epsilon, limit, kept, fwd, bwd,
                             "" if passed else "residual above epsilon", len(usable))


# -- candidate pools ------------------------------------------------------------------

def _residual(ev, probe: np.ndarray, s: np.ndarray, base: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.empty(len(s))
    for i in range(0, len(s), chunk):
        ss = s[i:i + chunk]
        vals = ev((probe[None, :] + ss[:, None]).ravel()).reshape(len(ss), len(probe))
        out[i:i + chunk] = np.max(np.abs(vals - base[None, :]), axis=1)
    return out


def near_returns(f, ts: TimeScale, search: tuple[float, float], step: float, tol: float,
                 probe: np.ndarray | None = None, max_count: int | None = None) -> TranslationSet:
    """Translations ``s`` with ``sup_probe |f(t+s) - f(t)| <= tol``.

    On scales with an exact period only multiples of it are scanned.  On R
    the residual is scanned on a grid of width ``step`` and each promising
    local minimum is refined by bounded scalar minimisation.
    """
    ev = _evaluator(f)
    lo, hi = map(float, search)
    if probe is None:
        span = min(ts.end - ts.start, 50.0)
        probe = ts.with_window(ts.start, ts.start + span).sample_points(samples=256) \
            if ts.generator is not Generator.EXPLICIT else ts.sample_points(samples=256)
    probe = np.asarray(probe, dtype=float)
    base = ev(probe)
    period = ts.period
    if period is not None:
        k = np.arange(math.ceil(lo / period - ATOL), math.floor(hi / period + ATOL) + 1)
        s = k * period
        s = s[s != 0]
        r = _residual(ev, probe, s, base)
        keep = s[r <= tol]
    elif ts.generator is Generator.REALS:
        coarse_probe = probe[:: max(1, len(probe) // 48)]
        cbase = ev(coarse_probe)
        dense = np.linspace(probe.min(), probe.max() + 1.0, 2048)
        dv = np.abs(np.diff(ev(dense))) / np.diff(dense)
        slope = float(np.max(dv)) if len(dv) else 1.0
        grid = np.arange(lo, hi + step * 0.5, step)
        thresh = tol + slope * step
        # cheap prescreen on four probes, full coarse residual only near survivors
        few = coarse_probe[:: max(1, len(coarse_probe) // 4)][:4]
        hit = np.flatnonzero(_residual(ev, few, grid, ev(few)) <= thresh)
        near = np.unique(np.clip(np.concatenate([hit - 1, hit, hit + 1]), 0, len(grid) - 1))
        r = np.full(len(grid), np.inf)
        if len(near):
            r[near] = _residual(ev, coarse_probe, grid[near], cbase)
        lm = np.flatnonzero((r[1:-1] <= r[:-2]) & (r[1:-1] <= r[2:]) & (r[1:-1] <= thresh)) + 1
        keep = []
        for i in lm:
            g = grid[i]
            res = minimize_scalar(lambda x: _residual(ev, probe, np.array([x]), base)[0],
                                  bounds=(g - step, g + step), method="bounded",
                                  options={"xatol": 1e-10})
            if res.fun <= tol and abs(res.x) > ATOL:
                keep.append(float(res.x))
                if max_count is not None and len(keep) >= max_count:
                    break
        keep = np.unique(np.round(np.asarray(keep), 9))
    else:
        raise ValueError("near-return scanning needs R or a scale with an exact period")
    keep = np.sort(np.asarray(keep, dtype=float))
    if max_count is not None:
        keep = keep[:max_count]
    return TranslationSet(float(tol), tuple(float(x) for x in keep), (lo, hi))


# -- pointwise operations --------------------------------------------------------------

@dataclass(frozen=True)
class Sum:
    pass


@dataclass(frozen=True)
class Product:
    pass


@dataclass(frozen=True)
class Scale:
    alpha: float


@dataclass(frozen=True)
class Translate:
    c: float


@dataclass(frozen=True)
class ComposeOuter:
    phi: Callable[[np.ndarray], np.ndarray]


def _align(f: GridFunction, g: GridFunction) -> np.ndarray:
    common = np.intersect1d(np.round(f.t, 9), np.round(g.t, 9))
    if len(common) == 0:
        raise ValueError("grid functions share no nodes")
    return common


def pointwise_combine(f: GridFunction, g: GridFunction | None, op) -> GridFunction:
    """Node-wise ``f + g``, ``f*g``, ``α f``, ``f(· + c)`` or ``φ∘f``."""
    if isinstance(op, (Sum, Product)):
        if g is None:
            raise ValueError(f"{type(op).__name__} needs two operands")
        t = _align(f, g)
        a, b = f.at_many(t), g.at_many(t)
        return GridFunction(f.ts, t, a + b if isinstance(op, Sum) else a * b)
    if isinstance(op, Scale):
        return GridFunction(f.ts, f.t, op.alpha * f.values)
    if isinstance(op, Translate):
        u = f.t + op.c
        ok = (u >= f.start - ATOL) & (u <= f.end + ATOL)
        ok[ok] = f.ts.contains_many(u[ok])
        if not np.any(ok):
            raise CoverageError(f"no node t with t + {op.c} covered")
        return GridFunction(f.ts, f.t[ok], f.at_many(u[ok]))
    if isinstance(op, ComposeOuter):
        return GridFunction(f.ts, f.t, np.asarray(op.phi(f.values), dtype=float))
    raise TypeError(f"unknown operation {op!r}")


# -- graininess ---------------------------------------------------------------------------

def graininess_function(ts: TimeScale, reach: float) -> Callable[[np.ndarray], np.ndarray]:
    """``μ`` as a vectorised callable valid on ``[ts.start, ts.end + reach]``."""
    if ts.generator is Generator.EXPLICIT:
        ext = ts
    else:
        pad = (ts.period or 1.0) + ts.sup_graininess + 1.0
        ext = ts.with_window(ts.start - reach - pad, ts.end + reach + pad)
    return ext.graininess_many


def graininess_automorphy_test(ts: TimeScale, candidates: TranslationSet | Sequence[float],
                               epsilon: float, **kw) -> AutomorphyVerdict:
    taus = list(candidates.taus if isinstance(candidates, TranslationSet) else candidates)
    reach = max((abs(s) for s in taus), default=0.0)
    mu = graininess_function(ts, 2 * reach)
    return test_almost_automorphic(mu, taus, ts, epsilon, **kw)


def test_uniform_in_x(f2: Callable[[np.ndarray, float], np.ndarray], probes: Sequence[float],
                      candidates, core, epsilon: float, **kw) -> list[AutomorphyVerdict]:
    """Scalar test of ``f(·, x_j)`` for each probe ``x_j``."""
    return [test_almost_automorphic(lambda t, x=x: f2(t, x), candidates, core, epsilon, **kw)
            for x in probes]


# -- coefficient spot checks ---------------------------------------------------------------

SPOT_EPSILON = 0.05
SPOT_POOL = 8


_SPOT_CACHE: dict[tuple, dict] = {}


def spot_check(expr: CoefficientExpr, ts: TimeScale, epsilon: float = SPOT_EPSILON) -> dict:
    """Evidence that a coefficient is almost automorphic on ``ts`` (cached).

    Candidates are near-return times: scanned on R over ``[1, 400π]``, or
    the period multiples up to 3000 otherwise.  The core is the first 60
    units of the window.
    """
    if expr.is_constant:
        return {"passed": True, "forward": 0.0, "backward": 0.0, "pool": 0}
    key = (str(expr), expr.var, ts.generator, ts.step, ts.on_len, ts.gap_len,
           ts.start, ts.end, float(epsilon))
    if key in _SPOT_CACHE:
        return _SPOT_CACHE[key]
    if ts.generator is Generator.REALS:
        search, step = (1.0, 400 * math.pi), 0.05
    elif ts.period is not None:
        search, step = (ts.period, max(3000.0, 10 * ts.period)), ts.period
    else:
        return {"passed": False, "forward": math.inf, "backward": math.inf, "pool": 0,
                "note": "explicit scale: no candidate pool"}
    core = ts.with_window(ts.start, ts.start + min(ts.end - ts.start, 60.0))
    pool = near_returns(expr, ts, search, step, epsilon / 4, max_count=SPOT_POOL)
    if len(pool) < 2:
        out = {"passed": False, "forward": math.inf, "backward": math.inf, "pool": len(pool)}
    else:
        v = test_almost_automorphic(expr, pool, core, epsilon)
        out = {"passed": v.passed, "forward": v.max_forward_residual,
               "backward": v.max_backward_residual, "pool": len(pool)}
    _SPOT_CACHE[key] = out
    return out
