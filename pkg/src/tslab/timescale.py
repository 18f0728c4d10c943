"""Time scales as generator + finite working window.

A time scale is a closed subset of the reals.  The infinite scales used in
practice (R, Z, hZ, periodic unions of intervals) are stored as a generator
together with the exact trace of that generator on a finite window, kept as a
sorted list of disjoint closed intervals.  Isolated points are degenerate
intervals ``[p, p]``.

Translation operations (``translate_intersect``, ``distance``,
``translation_numbers``, ``core_intersection``) use the generator to form the
shifted scale ``T - tau`` on the window, so that e.g. ``Z - 1`` is recognised
as ``Z`` rather than losing its last point to window clipping.  Explicit
scales have no generator beyond their trace and are shifted as finite sets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ATOL = 1e-9


class TimeScaleError(ValueError):
    """Invalid time-scale construction."""


class NotInTimeScale(ValueError):
    """A point was passed that does not belong to the scale."""


class Generator(enum.Enum):
    REALS = "reals"
    INTEGERS = "integers"
    STEP = "step"
    PERIODIC_UNION = "periodic_union"
    EXPLICIT = "explicit"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            key = value.strip().lower().replace("-", "_").replace(" ", "_")
            return _ALIASES.get(key)
        return None


_ALIASES = {
    "r": Generator.REALS, "real": Generator.REALS, "reals": Generator.REALS,
    "z": Generator.INTEGERS, "integer": Generator.INTEGERS, "integers": Generator.INTEGERS,
    "steph": Generator.STEP, "hz": Generator.STEP, "step": Generator.STEP,
    "periodicunion": Generator.PERIODIC_UNION, "pab": Generator.PERIODIC_UNION,
    "periodic_union": Generator.PERIODIC_UNION, "explicit": Generator.EXPLICIT,
}


class PointClass(enum.Enum):
    RIGHT_DENSE = "right_dense"
    RIGHT_SCATTERED = "right_scattered"
    LEFT_DENSE = "left_dense"
    LEFT_SCATTERED = "left_scattered"
    ISOLATED = "isolated"
    DENSE_BOTH = "dense_both"


def _merge(intervals: np.ndarray) -> np.ndarray:
    if len(intervals) == 0:
        return np.zeros((0, 2))
    iv = intervals[np.argsort(intervals[:, 0], kind="stable")]
    out = [list(iv[0])]
    for lo, hi in iv[1:]:
        if lo <= out[-1][1] + ATOL:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return np.asarray(out, dtype=float)


def _intersect(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Intersection of two sorted disjoint interval unions."""
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i, 0], b[j, 0])
        hi = min(a[i, 1], b[j, 1])
        if lo <= hi + ATOL:
            out.append((lo, max(lo, hi)))
        if a[i, 1] < b[j, 1]:
            i += 1
        else:
            j += 1
    return _merge(np.asarray(out, dtype=float).reshape(-1, 2))


@dataclass(frozen=True, eq=False)
class TimeScale:
    """A closed subset of R restricted to ``window``.

    ``intervals`` is an ``(k, 2)`` array of sorted, disjoint closed intervals.
    ``step`` is the spacing for ``STEP``/``INTEGERS``; ``on_len`` and
    ``gap_len`` parameterise ``PERIODIC_UNION`` as the union over k of
    ``[k(a+b), k(a+b)+a]``.
    """

    generator: Generator
    intervals: np.ndarray
    window: tuple[float, float]
    step: float = 1.0
    on_len: float = 0.0
    gap_len: float = 0.0
    _lo: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        iv = np.asarray(self.intervals, dtype=float).reshape(-1, 2)
        iv.setflags(write=False)
        object.__setattr__(self, "intervals", iv)
        object.__setattr__(self, "_lo", iv[:, 0])

    # -- basic structure -------------------------------------------------
    @property
    def is_empty(self) -> bool:
        return len(self.intervals) == 0

    @property
    def start(self) -> float:
        return float(self.intervals[0, 0])

    @property
    def end(self) -> float:
        return float(self.intervals[-1, 1])

    @property
    def is_discrete(self) -> bool:
        return bool(np.all(self.intervals[:, 1] - self.intervals[:, 0] <= ATOL))

    @property
    def sup_graininess(self) -> float:
        """Largest graininess of the (infinite) generator."""
        if self.generator is Generator.REALS:
            return 0.0
        if self.generator in (Generator.INTEGERS, Generator.STEP):
            return float(self.step)
        if self.generator is Generator.PERIODIC_UNION:
            return float(self.gap_len)
        if len(self.intervals) < 2:
            return 0.0
        return float(np.max(self.intervals[1:, 0] - self.intervals[:-1, 1]))

    @property
    def period(self) -> float | None:
        """Exact translation period of the generator, if it has one."""
        if self.generator in (Generator.INTEGERS, Generator.STEP):
            return float(self.step)
        if self.generator is Generator.PERIODIC_UNION:
            return float(self.on_len + self.gap_len)
        return None

    def __repr__(self) -> str:
        head = f"TimeScale({self.generator.value}, window={self.window}"
        return head + f", components={len(self.intervals)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeScale):
            return NotImplemented
        return self.intervals.shape == other.intervals.shape and bool(
            np.allclose(self.intervals, other.intervals, atol=ATOL, rtol=0.0)
        )

    __hash__ = None

    # -- generator traces -------------------------------------------------
    def trace(self, lo: float, hi: float) -> np.ndarray:
        """Intervals of the underlying generator on ``[lo, hi]``."""
        return _generator_trace(self, lo, hi)

    def with_window(self, lo: float, hi: float) -> "TimeScale":
        """Same generator on a different window (explicit scales are clipped)."""
        iv = self.trace(lo, hi)
        if len(iv) == 0:
            raise TimeScaleError(f"empty trace on [{lo}, {hi}]")
        return TimeScale(self.generator, iv, (float(lo), float(hi)), self.step, self.on_len, self.gap_len)

    def _explicit(self, iv: np.ndarray) -> "TimeScale":
        return TimeScale(Generator.EXPLICIT, iv, self.window)

    # -- membership and jumps ---------------------------------------------
    def _locate(self, t: float) -> int:
        i = int(np.searchsorted(self._lo, t + ATOL, side="right")) - 1
        if i >= 0 and t <= self.intervals[i, 1] + ATOL:
            return i
        return -1

    def contains(self, t: float) -> bool:
        return self._locate(float(t)) >= 0

    def contains_many(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self._lo, t + ATOL, side="right") - 1
        ok = i >= 0
        ic = np.clip(i, 0, None)
        return ok & (t <= self.intervals[ic, 1] + ATOL)

    def _require(self, t: float) -> int:
        i = self._locate(t)
        if i < 0:
            raise NotInTimeScale(f"t={t!r} is not in {self!r}")
        return i

    def sigma(self, t: float) -> float:
        """Forward jump; returns ``t`` at right-dense points and the window maximum."""
        t = float(t)
        i = self._require(t)
        if t < self.intervals[i, 1] - ATOL:
            return t
        if i + 1 < len(self.intervals):
            return float(self.intervals[i + 1, 0])
        return t

    def rho(self, t: float) -> float:
        """Backward jump; returns ``t`` at left-dense points and the window minimum."""
        t = float(t)
        i = self._require(t)
        if t > self.intervals[i, 0] + ATOL:
            return t
        if i > 0:
            return float(self.intervals[i - 1, 1])
        return t

    def graininess(self, t: float) -> float:
        return self.sigma(t) - float(t)

    def graininess_many(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if not np.all(self.contains_many(t)):
            bad = t[~self.contains_many(t)]
            raise NotInTimeScale(f"points {bad[:3]} are not in {self!r}")
        i = np.searchsorted(self._lo, t + ATOL, side="right") - 1
        at_end = t >= self.intervals[i, 1] - ATOL
        has_next = i + 1 < len(self.intervals)
        nxt = self.intervals[np.minimum(i + 1, len(self.intervals) - 1), 0]
        return np.where(at_end & has_next, nxt - t, 0.0)

    def at_right_edge(self, t: float) -> bool:
        """True when ``t`` is the window maximum, where sigma is truncated."""
        return abs(float(t) - self.end) <= ATOL

    def classify(self, t: float) -> PointClass:
        t = float(t)
        right_scattered = self.sigma(t) > t
        left_scattered = self.rho(t) < t
        # Window edges: the true scale continues, so judge the edge by the
        # generator rather than the truncated trace.
        if self.at_right_edge(t) and not right_scattered:
            right_scattered = _generator_right_scattered(self, t)
        if abs(t - self.start) <= ATOL and not left_scattered:
            left_scattered = _generator_left_scattered(self, t)
        if right_scattered and left_scattered:
            return PointClass.ISOLATED
        if not right_scattered and not left_scattered:
            return PointClass.DENSE_BOTH
        return PointClass.RIGHT_SCATTERED if right_scattered else PointClass.LEFT_SCATTERED

    # -- sampling -----------------------------------------------------------
    def components(self) -> Iterable[tuple[float, float]]:
        for lo, hi in self.intervals:
            yield float(lo), float(hi)

    def continuous_length(self) -> float:
        return float(np.sum(self.intervals[:, 1] - self.intervals[:, 0]))

    def sample_points(self, samples: int | None = None, per_unit: float = 64.0) -> np.ndarray:
        """All scattered points plus a uniform fill of the continuous components.

        With ``samples`` given, that many points are spread over the continuous
        part in proportion to component length (isolated points always count).
        """
        lengths = self.intervals[:, 1] - self.intervals[:, 0]
        total = float(np.sum(lengths))
        pts = []
        for (lo, hi), ln in zip(self.intervals, lengths):
            if ln <= ATOL:
                pts.append(np.array([lo]))
                continue
            if samples is not None and total > 0:
                k = max(2, int(round(samples * ln / total)))
            else:
                k = max(2, int(math.ceil(per_unit * ln)) + 1)
            pts.append(np.linspace(lo, hi, k))
        return np.unique(np.concatenate(pts))

    def discretize(self, per_unit: int = 16, min_steps: int = 64, lo: float | None = None,
                   hi: float | None = None) -> "Timeline":
        """Node grid for stepping: every scattered point plus uniform interior nodes.

        Each continuous component of length ``L`` gets
        ``max(min_steps, per_unit * ceil(L))`` steps.
        """
        iv = self.intervals if lo is None and hi is None else _intersect(
            self.intervals, np.array([[self.start if lo is None else lo, self.end if hi is None else hi]])
        )
        ts, dense, comp = [], [], []
        for c, (a, b) in enumerate(iv):
            if b - a <= ATOL:
                ts.append(np.array([a]))
                dense.append(np.array([False]))
            else:
                n = max(min_steps, int(per_unit) * int(math.ceil(b - a - ATOL)))
                ts.append(np.linspace(a, b, n + 1))
                d = np.ones(n + 1, dtype=bool)
                d[-1] = False
                dense.append(d)
            comp.append(np.full(len(ts[-1]), c, dtype=np.int64))
        t = np.concatenate(ts)
        dense = np.concatenate(dense)
        comp = np.concatenate(comp)
        return Timeline.build(t, dense, comp)


@dataclass(frozen=True, eq=False)
class Timeline:
    """Discretised trace used by the stepping kernels.

    ``dense[i]`` is True when nodes ``i`` and ``i+1`` lie in the same
    continuous component; otherwise node ``i`` is right-scattered with
    graininess ``mu[i]`` (``mu`` is zero on dense steps and at the last node).
    """

    t: np.ndarray
    mu: np.ndarray
    dense: np.ndarray
    comp: np.ndarray

    @classmethod
    def build(cls, t: np.ndarray, dense: np.ndarray, comp: np.ndarray) -> "Timeline":
        mu = np.zeros_like(t)
        jump = ~dense[:-1]
        mu[:-1][jump] = t[1:][jump] - t[:-1][jump]
        return cls(t=t, mu=mu, dense=dense, comp=comp)

    @classmethod
    def from_nodes(cls, ts: TimeScale, t) -> "Timeline":
        """Timeline over given nodes; consecutive nodes in one component are dense steps."""
        t = np.asarray(t, dtype=float)
        comp = (np.searchsorted(ts.intervals[:, 0], t + ATOL, side="right") - 1).astype(np.int64)
        dense = np.zeros(len(t), dtype=bool)
        if len(t) > 1:
            same = comp[1:] == comp[:-1]
            dense[:-1] = same & (np.diff(t) > ATOL)
        return cls.build(t, dense, comp)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.t)

    def index_of(self, u: float) -> int:
        i = int(np.searchsorted(self.t, u - ATOL))
        if i < len(self.t) and abs(self.t[i] - u) <= ATOL:
            return i
        raise NotInTimeScale(f"{u!r} is not a node")


def _generator_right_scattered(ts: TimeScale, t: float) -> bool:
    nxt = _generator_trace(ts, t, t + max(ts.sup_graininess, 1.0) + 1.0)
    return len(nxt) > 0 and nxt[0, 1] <= t + ATOL and (len(nxt) > 1)


def _generator_left_scattered(ts: TimeScale, t: float) -> bool:
    prv = _generator_trace(ts, t - max(ts.sup_graininess, 1.0) - 1.0, t)
    return len(prv) > 0 and prv[-1, 0] >= t - ATOL and (len(prv) > 1)


def _generator_trace(ts: TimeScale, lo: float, hi: float) -> np.ndarray:
    lo = float(lo)
    hi = float(hi)
    g = ts.generator
    if hi < lo:
        return np.zeros((0, 2))
    if g is Generator.REALS:
        return np.array([[lo, hi]])
    if g in (Generator.INTEGERS, Generator.STEP):
        h = ts.step
        k0 = math.ceil(lo / h - ATOL)
        k1 = math.floor(hi / h + ATOL)
        pts = np.arange(k0, k1 + 1, dtype=float) * h
        if g is Generator.INTEGERS:
            pts = np.round(pts)
        return np.column_stack([pts, pts])
    if g is Generator.PERIODIC_UNION:
        a, b = ts.on_len, ts.gap_len
        if b <= 0:
            return np.array([[lo, hi]])
        period = a + b
        k0 = math.floor((lo - a) / period) - 1
        k1 = math.floor(hi / period) + 1
        out = []
        for k in range(k0, k1 + 1):
            s = k * period
            c_lo, c_hi = max(s, lo), min(s + a, hi)
            if c_lo <= c_hi + ATOL:
                out.append((c_lo, max(c_lo, c_hi)))
        return _merge(np.asarray(out, dtype=float).reshape(-1, 2))
    return _intersect(ts.intervals, np.array([[lo, hi]]))


def make_timescale(generator: Generator | str, window_start: float, window_end: float, *,
                   h: float | None = None, a: float | None = None, b: float | None = None,
                   intervals: Sequence[Sequence[float]] | None = None) -> TimeScale:
    """Build the trace of ``generator`` on ``[window_start, window_end]``.

    >>> make_timescale("integers", 0, 3).intervals[:, 0].tolist()
    [0.0, 1.0, 2.0, 3.0]
    """
    g = Generator(generator)
    if not window_start < window_end:
        raise TimeScaleError("window_start must be < window_end")
    step, on_len, gap_len = 1.0, 0.0, 0.0
    if g is Generator.STEP:
        if h is None or not h > 0:
            raise TimeScaleError("StepH requires h > 0")
        step = float(h)
    elif g is Generator.PERIODIC_UNION:
        if a is None or not a > 0 or b is None or b < 0:
            raise TimeScaleError("PeriodicUnion requires a > 0 and b >= 0")
        on_len, gap_len = float(a), float(b)
    elif g is Generator.EXPLICIT:
        if intervals is None or len(intervals) == 0:
            raise TimeScaleError("Explicit time scales need caller-supplied intervals")
        iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
        if np.any(iv[:, 1] < iv[:, 0]):
            raise TimeScaleError("interval with hi < lo")
        iv = _intersect(_merge(iv), np.array([[window_start, window_end]]))
        if len(iv) == 0:
            raise TimeScaleError("empty trace on window")
        return TimeScale(g, iv, (float(window_start), float(window_end)))
    proto = TimeScale(g, np.zeros((0, 2)), (window_start, window_end), step, on_len, gap_len)
    iv = _generator_trace(proto, window_start, window_end)
    if len(iv) == 0:
        raise TimeScaleError("empty trace on window")
    return TimeScale(g, iv, (float(window_start), float(window_end)), step, on_len, gap_len)


def reals(lo: float, hi: float) -> TimeScale:
    return make_timescale(Generator.REALS, lo, hi)


def integers(lo: float, hi: float) -> TimeScale:
    return make_timescale(Generator.INTEGERS, lo, hi)


def step_scale(h: float, lo: float, hi: float) -> TimeScale:
    return make_timescale(Generator.STEP, lo, hi, h=h)


def periodic_union(a: float, b: float, lo: float, hi: float) -> TimeScale:
    return make_timescale(Generator.PERIODIC_UNION, lo, hi, a=a, b=b)


def explicit(intervals, lo: float | None = None, hi: float | None = None) -> TimeScale:
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    lo = float(iv[:, 0].min()) if lo is None else lo
    hi = float(iv[:, 1].max()) if hi is None else hi
    if lo == hi:
        hi = lo + ATOL
    return make_timescale(Generator.EXPLICIT, lo, hi, intervals=iv)


def sigma(ts: TimeScale, t: float) -> float:
    return ts.sigma(t)


def rho_back(ts: TimeScale, t: float) -> float:
    return ts.rho(t)


def graininess(ts: TimeScale, t: float) -> float:
    return ts.graininess(t)


# -- translations ---------------------------------------------------------------

def translate_intersect(ts: TimeScale, tau: float, window: bool = False) -> TimeScale:
    """``T ∩ (T - tau)`` on the window of ``ts``; may be empty.

    With ``window=True`` the finite trace itself is shifted, as for an
    explicit scale; otherwise ``T - tau`` comes from the generator.
    """
    lo, hi = ts.start, ts.end
    if window or ts.generator is Generator.EXPLICIT:
        shifted = np.asarray(ts.intervals) - tau
    else:
        shifted = ts.trace(lo + tau, hi + tau) - tau
    return ts._explicit(_intersect(np.asarray(ts.intervals), shifted))


def _point_distance(t: np.ndarray, iv: np.ndarray) -> np.ndarray:
    lo, hi = iv[:, 0], iv[:, 1]
    j = np.searchsorted(lo, t, side="right") - 1
    d = np.full(t.shape, np.inf)
    has_left = j >= 0
    jl = np.clip(j, 0, None)
    inside = has_left & (t <= hi[jl])
    d = np.where(has_left, np.maximum(t - hi[jl], 0.0), d)
    jr = np.clip(j + 1, 0, len(lo) - 1)
    has_right = j + 1 < len(lo)
    d = np.where(has_right, np.minimum(d, np.maximum(lo[jr] - t, 0.0)), d)
    return np.where(inside, 0.0, d)


def _one_sided(a: np.ndarray, b: np.ndarray) -> float:
    cand = [a[:, 0], a[:, 1]]
    if len(b) > 1:
        mids = 0.5 * (b[1:, 0] + b[:-1, 1])
        keep = _point_distance(mids, a) == 0.0
        cand.append(mids[keep])
    c = np.concatenate(cand)
    return float(np.max(_point_distance(c, b)))


def distance(ts1: TimeScale, ts2: TimeScale) -> float:
    """Hausdorff-style distance between two traces, exact from endpoints."""
    if ts1.is_empty or ts2.is_empty:
        return math.inf
    a, b = np.asarray(ts1.intervals), np.asarray(ts2.intervals)
    return max(_one_sided(a, b), _one_sided(b, a))


@dataclass(frozen=True)
class TranslationSet:
    epsilon: float
    taus: tuple[float, ...]
    search_range: tuple[float, float]

    def __len__(self) -> int:
        return len(self.taus)

    def __iter__(self):
        return iter(self.taus)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.taus, dtype=float)


def _exact_candidates(ts: TimeScale, lo: float, hi: float) -> np.ndarray:
    p = ts.period
    if p is None:
        return np.zeros(0)
    k = np.arange(math.ceil(lo / p - ATOL), math.floor(hi / p + ATOL) + 1)
    return k * p


def translation_numbers(ts: TimeScale, epsilon: float, search_range: tuple[float, float],
                        step: float) -> TranslationSet:
    """Scan ``search_range`` for epsilon-translation numbers of ``ts``.

    Grid candidates are augmented with exact multiples of the generator's
    period, so periodic scales report exact zeros.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    lo, hi = map(float, search_range)
    grid = lo + step * np.arange(int(math.floor((hi - lo) / step + ATOL)) + 1)
    cand = np.unique(np.round(np.concatenate([grid, _exact_candidates(ts, lo, hi)]), 9))
    keep = []
    for tau in cand:
        shifted = translate_intersect(ts, float(tau))
        if shifted.is_empty:
            continue
        if distance(ts, shifted) <= epsilon + 1e-12:
            keep.append(float(tau))
    return TranslationSet(float(epsilon), tuple(keep), (lo, hi))


def core_intersection(ts: TimeScale, taus: Iterable[float], window: bool = False) -> TimeScale:
    """Finite approximation of the common core: intersection of ``T_tau``."""
    iv = np.asarray(ts.intervals)
    for tau in taus:
        iv = _intersect(iv, np.asarray(translate_intersect(ts, float(tau), window).intervals))
        if len(iv) == 0:
            break
    return ts._explicit(iv)
