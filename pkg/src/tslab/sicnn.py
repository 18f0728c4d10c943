"""Shunting inhibitory cellular neural networks with discrete and distributed delays.

Cell ``(i, j)`` of an ``m × n`` lattice obeys

    x_ij^Δ = -a_ij x_ij - Σ_{N_r(i,j)} B_ij^kl f(x_kl(t - τ_kl)) x_ij
             - Σ_{N_p(i,j)} C_ij^kl ∫_{t-δ_kl}^t g(x_kl(u)) Δu x_ij + L_ij

Cells are flattened row-major to ``k = i*n + j`` (0-based) internally; the
public neighbourhood API uses 1-based lattice indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .automorphy import SPOT_EPSILON, spot_check
from .calculus import GridFunction, delta_integral
from .expr import BoundEstimate, Call, CoefficientExpr, bound_estimate, parse
from .timescale import ATOL, Generator, TimeScale, Timeline

COEFFS = ("a", "B", "C", "L", "tau", "delta")
DELAY_POLICIES = ("strict", "snap")


class ModelError(ValueError):
    pass


class DelayError(ValueError):
    """A delay point is not in the time scale, precedes the history, or lies ahead."""


class HypothesisError(ValueError):
    pass


class NonContractionError(RuntimeError):
    pass


# -- activations ------------------------------------------------------------------------

@dataclass(eq=False)
class Activation:
    """Scalar activation ``x -> expr(x)`` with declared Lipschitz and bound constants."""

    expr: CoefficientExpr
    lipschitz: float
    bound: float
    _program: tuple | None = field(default=None, init=False, repr=False)

    @classmethod
    def from_text(cls, expr: str, lipschitz: float, bound: float) -> "Activation":
        return cls(parse(expr, var="x"), float(lipschitz), float(bound))

    def __call__(self, x):
        if np.ndim(x) == 0:
            return self.expr.eval(x)
        return self.expr.eval_many(x)

    @property
    def program(self) -> tuple[np.ndarray, np.ndarray]:
        """Postfix program evaluated by the stepping kernels."""
        if self._program is None:
            self._program = self.expr.bytecode()
        return self._program


# -- model ----------------------------------------------------------------------------------

def _expr_table(table, shape: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.empty(shape, dtype=object)
    data = np.asarray(table, dtype=object)
    if data.shape != shape:
        raise ModelError(f"{name} has shape {data.shape}, expected {shape}")
    for idx in np.ndindex(shape):
        v = data[idx]
        arr[idx] = v if isinstance(v, CoefficientExpr) else parse(v if isinstance(v, str) else float(v))
    return arr


def _depth(x) -> int:
    d = 0
    while isinstance(x, (list, tuple, np.ndarray)) and len(x):
        x = x[0]
        d += 1
    return d


@dataclass(eq=False)
class SicnnModel:
    """System parameters; ``B``/``C`` are ``m×n`` source-cell tables or ``m×n×m×n`` full tables."""

    m: int
    n: int
    r: int
    p: int
    a: Sequence
    B: Sequence
    C: Sequence
    L: Sequence
    tau: Sequence
    delta: Sequence
    f_act: Activation
    g_act: Activation
    ts: TimeScale
    declared: dict = field(default_factory=dict)
    delay_policy: str = "strict"
    name: str = ""

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.r < 0 or self.p < 0:
            raise ModelError("lattice sizes must be positive and radii nonnegative")
        mn = (self.m, self.n)
        self.a = _expr_table(self.a, mn, "a")
        self.L = _expr_table(self.L, mn, "L")
        self.tau = _expr_table(self.tau, mn, "tau")
        self.delta = _expr_table(self.delta, mn, "delta")
        self.full_B = _depth(self.B) == 4
        self.full_C = _depth(self.C) == 4
        self.B = _expr_table(self.B, mn + mn if self.full_B else mn, "B")
        self.C = _expr_table(self.C, mn + mn if self.full_C else mn, "C")
        if self.delay_policy not in DELAY_POLICIES:
            raise ModelError(f"delay_policy must be one of {DELAY_POLICIES}")
        decl = {}
        for key, val in self.declared.items():
            decl[key] = np.asarray(val, dtype=float)
        self.declared = decl

    # -- lattice --
    @property
    def K(self) -> int:
        return self.m * self.n

    def cell_names(self) -> list[str]:
        return [f"x_{i + 1}{j + 1}" if max(self.m, self.n) < 10 else f"x_{i + 1}_{j + 1}"
                for i in range(self.m) for j in range(self.n)]

    def neighborhood(self, i: int, j: int, radius: int) -> list[tuple[int, int]]:
        """Chebyshev ball of ``radius`` around ``(i, j)`` clipped to the lattice (1-based)."""
        if not (1 <= i <= self.m and 1 <= j <= self.n):
            raise IndexError(f"cell ({i}, {j}) outside {self.m}x{self.n} lattice")
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        return [(k, l) for k in range(max(1, i - radius), min(self.m, i + radius) + 1)
                for l in range(max(1, j - radius), min(self.n, j + radius) + 1)]

    def mask(self, radius: int) -> np.ndarray:
        ii, jj = np.divmod(np.arange(self.K), self.n)
        return (np.abs(ii[:, None] - ii[None, :]) <= radius) & (np.abs(jj[:, None] - jj[None, :]) <= radius)

    # -- coefficient tables --
    def _eval_table(self, table: np.ndarray, t: np.ndarray) -> np.ndarray:
        out = np.empty((len(t),) + table.shape)
        cache: dict[str, np.ndarray] = {}
        for idx in np.ndindex(table.shape):
            e = table[idx]
            key = str(e)
            if key not in cache:
                cache[key] = e.eval_many(t)
            out[(slice(None),) + idx] = cache[key]
        return out

    def coefficient_arrays(self, t: np.ndarray) -> dict[str, np.ndarray]:
        """All coefficients at times ``t``: ``a, L, tau, delta`` as ``(N, K)``, ``B, C`` as ``(N, K, K)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        N, K = len(t), self.K
        out = {}
        for name in ("a", "L", "tau", "delta"):
            out[name] = self._eval_table(getattr(self, name), t).reshape(N, K)
        for name, full, radius in (("B", self.full_B, self.r), ("C", self.full_C, self.p)):
            vals = self._eval_table(getattr(self, name), t)
            if full:
                mat = vals.reshape(N, K, K)
            else:
                mat = np.broadcast_to(vals.reshape(N, 1, K), (N, K, K))
            out[name] = np.ascontiguousarray(mat * self.mask(radius)[None])
        return out

    # -- bounds --
    def bounds(self, samples: int | None = None) -> "ModelBounds":
        return ModelBounds.compute(self, samples)

    def with_ts(self, ts: TimeScale) -> "SicnnModel":
        return _replace(self, ts=ts)

    def scaled(self, **factors: float) -> "SicnnModel":
        """Copy with coefficient tables multiplied by constants (declared bounds follow)."""
        kw = {}
        decl = dict(self.declared)
        for name, c in factors.items():
            tab = getattr(self, name)
            kw[name] = np.vectorize(lambda e: parse(f"{float(c)!r}*({e})"), otypes=[object])(tab)
            for key in (f"{name}_upper", f"{name}_lower"):
                if key in decl:
                    decl[key] = decl[key] * c
        kw["declared"] = decl
        return _replace(self, **kw)


def _replace(model: SicnnModel, **kw) -> SicnnModel:
    base = dict(m=model.m, n=model.n, r=model.r, p=model.p, a=model.a, B=model.B, C=model.C,
                L=model.L, tau=model.tau, delta=model.delta, f_act=model.f_act,
                g_act=model.g_act, ts=model.ts, declared=model.declared,
                delay_policy=model.delay_policy, name=model.name)
    base.update(kw)
    for k in ("a", "B", "C", "L", "tau", "delta"):
        if isinstance(base[k], np.ndarray):
            base[k] = base[k].tolist()
    return SicnnModel(**base)


@dataclass
class ModelBounds:
    """Per-coefficient bounds: ``a_lower`` and the upper bounds used by the hypotheses.

    ``B_upper``/``C_upper`` are ``(K, K)`` with neighbourhood masks applied;
    ``L_upper`` is ``sup |L|``; delay bounds are clipped at zero.
    """

    a_lower: np.ndarray
    a_upper: np.ndarray
    B_upper: np.ndarray
    C_upper: np.ndarray
    L_upper: np.ndarray
    tau_upper: np.ndarray
    delta_upper: np.ndarray
    methods: dict

    @classmethod
    def compute(cls, model: SicnnModel, samples: int | None = None) -> "ModelBounds":
        ts = model.ts
        decl = model.declared
        methods = {}
        cache: dict[tuple[str, bool], BoundEstimate] = {}

        def est(e: CoefficientExpr, absolute: bool = False) -> BoundEstimate:
            key = (str(e), absolute)
            if key not in cache:
                target = CoefficientExpr(Call("abs", (e.ast,)), e.var) if absolute else e
                cache[key] = bound_estimate(target, ts, samples)
            return cache[key]

        def table(name: str, which: str, absolute: bool = False) -> np.ndarray:
            tab = getattr(model, name)
            key = f"{name}_{which}"
            if key in decl:
                methods[key] = "declared"
                v = np.asarray(decl[key], dtype=float)
                if v.shape != tab.shape:
                    raise ModelError(f"declared {key} has shape {v.shape}, expected {tab.shape}")
                return v
            methods[key] = "sampled"
            out = np.empty(tab.shape)
            for idx in np.ndindex(tab.shape):
                b = est(tab[idx], absolute)
                out[idx] = b.inf_value if which == "lower" else b.sup_value
            return out

        K = model.K
        a_lo = table("a", "lower")
        a_hi = table("a", "upper")
        Bu = table("B", "upper")
        Cu = table("C", "upper")
        Lu = table("L", "upper", absolute=True)
        tu = np.maximum(table("tau", "upper"), 0.0)
        du = np.maximum(table("delta", "upper"), 0.0)
        Bm = Bu.reshape(K, K) if model.full_B else np.broadcast_to(Bu.reshape(1, K), (K, K))
        Cm = Cu.reshape(K, K) if model.full_C else np.broadcast_to(Cu.reshape(1, K), (K, K))
        return cls(a_lo, a_hi, Bm * model.mask(model.r), Cm * model.mask(model.p), Lu, tu, du,
                   methods)


# -- hypotheses -------------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    h1_ok: bool
    h2_ok: bool
    h3_value_1: float
    h3_value_2: float
    rho: float
    h3_ok: bool
    per_cell_table: list[dict]
    max_L_over_a: float
    h1_details: dict
    h2_details: dict
    bound_methods: dict

    def to_json(self) -> dict:
        return {
            "h1_ok": self.h1_ok, "h2_ok": self.h2_ok, "h3_ok": self.h3_ok, "rho": self.rho,
            "h3_value_1": self.h3_value_1, "h3_value_2": self.h3_value_2,
            "max_L_over_a": self.max_L_over_a, "per_cell": self.per_cell_table,
            "h1": self.h1_details, "h2": self.h2_details, "bounds": self.bound_methods,
        }


def h3_quotients(model: SicnnModel, rho: float, bounds: ModelBounds | None = None):
    """Per-cell ``(Q1, Q2)`` as flat ``(K,)`` arrays."""
    b = model.bounds() if bounds is None else bounds
    if np.any(b.a_lower <= 0):
        raise HypothesisError("nonpositive lower bound of a_ij")
    fa, ga = model.f_act, model.g_act
    a = b.a_lower.reshape(-1)
    sb = b.B_upper.sum(axis=1)
    scd = (b.C_upper * b.delta_upper.reshape(1, -1)).sum(axis=1)
    q1 = (sb * fa.bound * rho ** 2 + scd * ga.bound * rho ** 2 + b.L_upper.reshape(-1)) / a
    q2 = (sb * (fa.bound + fa.lipschitz) * rho + scd * (ga.bound + ga.lipschitz) * rho) / a
    return q1, q2


def check_activation(act: Activation, rho: float, probes: int = 4001) -> dict:
    """Numerical checks of ``act(0) = 0``, ``|act| <= M`` and the Lipschitz constant on ``[-R, R]``.

    ``R = max(rho, 1)``; the bound is checked on ``[-rho, rho]``.
    """
    R = max(float(rho), 1.0)
    x = np.linspace(-R, R, probes)
    v = act(x)
    zero = abs(act(0.0))
    slope = float(np.max(np.abs(np.diff(v)) / np.diff(x)))
    inner = np.abs(x) <= rho + 1e-12
    sup = float(np.max(np.abs(v[inner])))
    tol = 1e-9
    return {
        "zero_ok": zero <= tol, "value_at_zero": float(zero),
        "lipschitz_ok": slope <= act.lipschitz * (1 + 1e-9) + tol, "measured_lipschitz": slope,
        "bound_ok": sup <= act.bound + tol, "measured_bound": sup,
    }


def check_hypotheses(model: SicnnModel, rho: float, samples: int | None = None,
                     spot_checks: bool = True) -> HypothesisReport:
    b = model.bounds(samples)
    q1, q2 = h3_quotients(model, rho, b)
    K = model.K
    # H1: -a_ij positively regressive, plus automorphy evidence for the coefficients
    ts = model.ts
    pts = ts.sample_points(samples=samples)
    mu = ts.graininess_many(pts)
    worst = math.inf
    for idx in np.ndindex(model.a.shape):
        worst = min(worst, float(np.min(1.0 - mu * model.a[idx].eval_many(pts))))
    h1 = {"min_1_minus_mu_a": worst, "regressive_ok": worst > 0}
    spots_ok = True
    if spot_checks:
        failed = []
        seen = set()
        for name in COEFFS:
            for e in getattr(model, name).ravel():
                key = str(e)
                if key in seen:
                    continue
                seen.add(key)
                res = spot_check(e, ts, SPOT_EPSILON)
                if not res["passed"]:
                    failed.append(key)
        spots_ok = not failed
        h1.update({"automorphy_evidence": spots_ok, "automorphy_failed": failed,
                   "spot_epsilon": SPOT_EPSILON, "checked": len(seen)})
    h1_ok = bool(h1["regressive_ok"] and spots_ok)
    h2 = {"f": check_activation(model.f_act, rho), "g": check_activation(model.g_act, rho)}
    h2_ok = all(all(v for k, v in d.items() if k.endswith("_ok")) for d in h2.values())
    table = []
    for k in range(K):
        i, j = divmod(k, model.n)
        table.append({"cell": [i + 1, j + 1], "q1": float(q1[k]), "q2": float(q2[k]),
                      "L_over_a": float(b.L_upper.reshape(-1)[k] / b.a_lower.reshape(-1)[k])})
    v1, v2 = float(np.max(q1)), float(np.max(q2))
    return HypothesisReport(
        h1_ok=h1_ok, h2_ok=bool(h2_ok), h3_value_1=v1, h3_value_2=v2, rho=float(rho),
        h3_ok=bool(v1 < rho and v2 < 1.0), per_cell_table=table,
        max_L_over_a=float(np.max(b.L_upper / b.a_lower)), h1_details=h1, h2_details=h2,
        bound_methods=b.methods)


def find_rho(model: SicnnModel, grid: Sequence[float]) -> float | None:
    """Smallest ``rho`` in ``grid`` satisfying the third hypothesis."""
    if not len(grid):
        raise ValueError("grid must be nonempty")
    b = model.bounds()
    for rho in sorted(float(x) for x in grid):
        q1, q2 = h3_quotients(model, rho, b)
        if np.max(q1) < rho and np.max(q2) < 1.0:
            return rho
    return None


# -- delays --------------------------------------------------------------------------------------

def nearest_points(ts: TimeScale, u: np.ndarray) -> np.ndarray:
    """Nearest point of ``ts`` to each ``u`` (ties go to the earlier point)."""
    iv = ts.intervals
    u = np.asarray(u, dtype=float)
    j = np.searchsorted(iv[:, 0], u + ATOL, side="right") - 1
    jc = np.clip(j, 0, len(iv) - 1)
    inside = (j >= 0) & (u <= iv[jc, 1] + ATOL)
    left = np.where(j >= 0, iv[jc, 1], -np.inf)
    jr = np.clip(j + 1, 0, len(iv) - 1)
    right = np.where(j + 1 < len(iv), iv[jr, 0], np.inf)
    pick = np.where(u - left <= right - u, left, right)
    return np.where(inside, u, pick)


def floor_point(ts: TimeScale, u: float) -> float:
    """Largest point of ``ts`` not exceeding ``u``."""
    iv = ts.intervals
    j = int(np.searchsorted(iv[:, 0], u + ATOL, side="right")) - 1
    if j < 0:
        raise DelayError(f"no point of the time scale at or before {u!r}")
    return float(min(u, iv[j, 1]))


def delay_points(model: SicnnModel, ts: TimeScale, s: np.ndarray, lag: np.ndarray) -> np.ndarray:
    """Delay points ``s - lag`` under the model's delay policy.

    ``strict`` requires nonnegative lags landing in the scale; ``snap`` clips
    lags at zero and moves each point to the nearest scale point.
    """
    s = np.asarray(s, dtype=float)[:, None]
    if model.delay_policy == "snap":
        u = s - np.maximum(lag, 0.0)
        return nearest_points(ts, u.ravel()).reshape(u.shape)
    if np.any(lag < -ATOL):
        w = np.argwhere(lag < -ATOL)[0]
        raise DelayError(f"negative delay {lag[tuple(w)]:.6g} at t={s[w[0], 0]!r}")
    u = s - np.maximum(lag, 0.0)
    ok = ts.contains_many(u.ravel()).reshape(u.shape)
    if not np.all(ok):
        w = np.argwhere(~ok)[0]
        raise DelayError(f"delay point {u[tuple(w)]!r} (from t={s[w[0], 0]!r}) is not in the time scale")
    return u


def rhs(model: SicnnModel, t: float, state, lookup: Callable[[float], np.ndarray]) -> np.ndarray:
    """Right-hand side at ``t`` for the current ``state`` (``m×n``).

    ``lookup(u)`` returns the state at a past time ``u <= t`` and must cover
    ``[t - θ, t]``; the distributed term integrates ``g(x_kl)`` with
    :func:`delta_integral`.
    """
    K = model.K
    x = np.asarray(state, dtype=float).reshape(K)
    co = model.coefficient_arrays(np.array([float(t)]))
    lag = max(float(np.max(co["tau"])), float(np.max(co["delta"])), 0.0)
    ts = _sim_scale(model, t - lag - 2 * model.ts.sup_graininess - 1.0, float(t))
    ut = delay_points(model, ts, np.array([float(t)]), co["tau"])[0]
    ud = delay_points(model, ts, np.array([float(t)]), co["delta"])[0]
    g = model.g_act

    def past(u: float) -> np.ndarray:
        if abs(u - t) <= ATOL:
            return x
        v = lookup(u)
        if v is None:
            raise DelayError(f"history lookup missed at u={u!r}")
        return np.asarray(v, dtype=float).reshape(K)

    fv = np.array([model.f_act(past(ut[k])[k]) for k in range(K)])
    iv = np.empty(K)
    for k in range(K):
        if t - ud[k] <= ATOL:
            iv[k] = 0.0
        else:
            gk = lambda u, k=k: np.array([g(past(v)[k]) for v in np.atleast_1d(u)]) \
                if np.ndim(u) else g(past(u)[k])
            iv[k] = delta_integral(gk, ud[k], float(t), ts)
    out = -co["a"][0] * x - (co["B"][0] @ fv + co["C"][0] @ iv) * x + co["L"][0]
    return out.reshape(model.m, model.n)


# -- trajectories ------------------------------------------------------------------------------

@dataclass
class History:
    """Initial function on ``[t0 - theta, t0]``; ``phi`` maps times ``(N,)`` to states ``(N, K)``."""

    phi: Callable[[np.ndarray], np.ndarray]
    theta: float | None = None
    label: str = ""

    @classmethod
    def constant(cls, value: float | Sequence[float], K: int | None = None) -> "History":
        v = np.asarray(value, dtype=float).reshape(-1)

        def phi(t):
            t = np.asarray(t, dtype=float)
            return np.broadcast_to(v, (len(t), K if (K and v.size == 1) else v.size)).copy()
        return cls(phi, label=f"constant {value}")

    @classmethod
    def from_exprs(cls, exprs: Sequence, m: int, n: int) -> "History":
        """Per-cell expressions of ``t`` (an ``m×n`` table) or a single expression for all cells."""
        if isinstance(exprs, (str, int, float, CoefficientExpr)):
            table = [[exprs] * n for _ in range(m)]
        else:
            table = exprs
        tab = _expr_table(table, (m, n), "history")

        def phi(t):
            t = np.asarray(t, dtype=float)
            return np.stack([e.eval_many(t) for e in tab.ravel()], axis=1)
        return cls(phi, label="expressions")

    @classmethod
    def from_grid(cls, gf: GridFunction) -> "History":
        return cls(lambda t: gf.at_many(np.asarray(t, dtype=float)), label="grid")


@dataclass
class Trajectory:
    states: GridFunction
    history: History | None
    sup_norm: float
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.states.t

    @property
    def x(self) -> np.ndarray:
        return self.states.values

    def to_csv(self, path, names: Sequence[str]) -> None:
        write_csv(path, self.t, self.x, names)


def write_csv(path, t: np.ndarray, x: np.ndarray, names: Sequence[str]) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names])
        for ti, row in zip(t, x):
            w.writerow([repr(float(ti)), *(repr(float(v)) for v in row)])


def _sim_scale(model: SicnnModel, lo: float, hi: float) -> TimeScale:
    ts = model.ts
    if ts.generator is Generator.EXPLICIT:
        if lo < ts.start - ATOL or hi > ts.end + ATOL:
            raise DelayError(f"explicit time scale does not cover [{lo}, {hi}]")
        return ts
    return ts.with_window(lo, hi)


def _timeline(ts: TimeScale, lo: float, hi: float, per_unit: int, min_steps: int) -> Timeline:
    return ts.discretize(per_unit=per_unit, min_steps=min_steps, lo=lo, hi=hi)


def _mids(line: Timeline) -> np.ndarray:
    m = line.t.copy()
    m[:-1] = np.where(line.dense[:-1], 0.5 * (line.t[:-1] + line.t[1:]), line.t[:-1])
    return m


_STATUS = {
    _kernels.MISS_GAP: "delay point falls in a gap of the time scale",
    _kernels.MISS_HISTORY: "delay point precedes the history",
    _kernels.MISS_AHEAD: "delay point lies after the stage time",
}


def simulate(model: SicnnModel, history: History, t0: float, t_end: float, *,
             per_unit: int = 16, min_steps: int = 64) -> Trajectory:
    """Integrate the network from ``history`` on ``[t0 - θ, t0]`` to ``t_end``.

    Right-scattered steps use ``x(σ(t)) = x(t) + μ(t) rhs(t)``; dense steps use RK4
    with cubic Hermite dense output for delayed lookups.
    """
    t0, t_end = float(t0), float(t_end)
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    b = model.bounds()
    theta0 = float(max(np.max(b.tau_upper), np.max(b.delta_upper), 0.0))
    pad = theta0 + 2 * model.ts.sup_graininess + 1.0
    ts = _sim_scale(model, t0 - pad, t_end)
    if not ts.contains(t0) or not ts.contains(t_end):
        raise DelayError("t0 and t_end must belong to the time scale")
    fwd = _timeline(ts, t0, t_end, per_unit, min_steps)
    s_nd, s_md = fwd.t, _mids(fwd)
    co_nd = model.coefficient_arrays(s_nd)
    co_md = model.coefficient_arrays(s_md)
    ut = [delay_points(model, ts, s, c["tau"]) for s, c in ((s_nd, co_nd), (s_md, co_md))]
    ud = [delay_points(model, ts, s, c["delta"]) for s, c in ((s_nd, co_nd), (s_md, co_md))]
    earliest = min(float(np.min(u)) for u in ut + ud)
    theta = max(theta0 if history.theta is None else history.theta, t0 - earliest)
    lo = t0 - theta
    if lo < ts.start - ATOL:
        raise DelayError(f"history would need to start at {lo}, before the scale window")
    lo = floor_point(ts, lo)
    if t0 - lo > ATOL:
        hist = _timeline(ts, lo, t0, per_unit, min_steps)
        nodes = np.concatenate([hist.t[:-1], fwd.t])
    else:
        nodes = fwd.t
    line = Timeline.from_nodes(ts, nodes)
    N, K = len(nodes), model.K
    n_hist = N - len(fwd.t) + 1
    # pad coefficient rows for the history nodes (never read)
    def pad_rows(a):
        z = np.zeros((n_hist - 1,) + a.shape[1:])
        return np.ascontiguousarray(np.concatenate([z, a]))

    X = np.zeros((N, K))
    X[:n_hist] = np.asarray(history.phi(nodes[:n_hist]), dtype=float).reshape(n_hist, K)
    DR = np.zeros((N, K))
    DL = np.zeros((N, K))
    if n_hist > 1:
        hl = Timeline.from_nodes(ts, nodes[:n_hist])
        for i in range(n_hist - 1):
            if hl.dense[i]:
                h = nodes[i + 1] - nodes[i]
                slope = (X[i + 1] - X[i]) / h
                DR[i] = slope
                DL[i + 1] = slope
    args = []
    for key in ("a", "L", "B", "C"):
        args += [pad_rows(co_nd[key]), pad_rows(co_md[key])]
    a_nd, a_md, L_nd, L_md, B_nd, B_md, C_nd, C_md = args
    ut_nd, ut_md = pad_rows(ut[0]), pad_rows(ut[1])
    ud_nd, ud_md = pad_rows(ud[0]), pad_rows(ud[1])
    st, at, G = _kernels.sicnn_simulate(line.t, line.dense, line.mu, n_hist, X, DR, DL,
                                        a_nd, a_md, L_nd, L_md, B_nd, B_md, C_nd, C_md,
                                        ut_nd, ut_md, ud_nd, ud_md,
                                        *model.f_act.program, *model.g_act.program)
    if st != _kernels.OK:
        raise DelayError(f"{_STATUS.get(st, 'lookup failure')} near t={line.t[at]!r}")
    states = GridFunction(ts, nodes[n_hist - 1:], X[n_hist - 1:])
    sup = float(np.max(np.abs(states.values)))
    hist_gf = GridFunction(ts, nodes[:n_hist], X[:n_hist])
    meta = {"theta": theta, "history_grid": hist_gf, "per_unit": per_unit}
    return Trajectory(states, history, sup, meta)


# -- Picard operator ---------------------------------------------------------------------------

class PicardOperator:
    """The fixed-point map ``φ -> x^φ`` on the model's window.

    Each cell solves ``x^Δ = -a_ij x + F_ij(φ)`` forward from the window start,
    starting at ``F_ij/a_ij`` (the exact value for coefficients frozen before
    the window).  ``φ`` is extended by its first node value before the
    window; lookups between nodes interpolate linearly.  ``margin`` is the
    burn-in width ``3/min a̲`` excluded by :meth:`norm`.
    """

    def __init__(self, model: SicnnModel, per_unit: int = 16, min_steps: int = 64):
        self.model = model
        ts = model.ts
        self.line = ts.discretize(per_unit=per_unit, min_steps=min_steps)
        self.t = self.line.t
        self.mid = _mids(self.line)
        self.co_nd = model.coefficient_arrays(self.t)
        self.co_md = model.coefficient_arrays(self.mid)
        b = model.bounds()
        self.margin = 3.0 / float(np.min(b.a_lower))
        ext = _sim_scale(model, ts.start - float(max(np.max(b.tau_upper), np.max(b.delta_upper)))
                         - 2 * ts.sup_graininess - 1.0, ts.end) \
            if ts.generator is not Generator.EXPLICIT else ts
        self.ut = [delay_points(model, ext, s, c["tau"])
                   for s, c in ((self.t, self.co_nd), (self.mid, self.co_md))]
        self.ud = [delay_points(model, ext, s, c["delta"])
                   for s, c in ((self.t, self.co_nd), (self.mid, self.co_md))]
        self.post = self.t >= self.t[0] + self.margin - ATOL
        self.f = model.f_act
        self.g = model.g_act

    @property
    def K(self) -> int:
        return self.model.K

    def _lookup(self, vals: np.ndarray, u: np.ndarray) -> np.ndarray:
        t = self.t
        out = np.empty(u.shape)
        for k in range(u.shape[1]):
            out[:, k] = np.interp(u[:, k], t, vals[:, k])
        return out

    def _cumulative(self, vals: np.ndarray) -> np.ndarray:
        gv = self.g(vals)
        d = self.line.dense[:-1]
        h = np.diff(self.t)
        gm = self.g(0.5 * (vals[:-1] + vals[1:]))
        inc = np.where(d[:, None], h[:, None] / 6.0 * (gv[:-1] + 4 * gm + gv[1:]),
                       self.line.mu[:-1, None] * gv[:-1])
        return np.vstack([np.zeros((1, vals.shape[1])), np.cumsum(inc, axis=0)])

    def _cum_at(self, vals: np.ndarray, G: np.ndarray, v: np.ndarray) -> np.ndarray:
        t = self.t
        out = np.empty(v.shape)
        for k in range(v.shape[1]):
            vk = v[:, k]
            before = vk < t[0] - ATOL
            j = np.clip(np.searchsorted(t, vk + ATOL, side="right") - 1, 0, len(t) - 1)
            exact = np.abs(t[j] - vk) <= ATOL
            gk = G[j, k].copy()
            part = ~exact & ~before
            if np.any(part):
                jj = j[part]
                x0 = vals[jj, k]
                x1 = vals[np.minimum(jj + 1, len(t) - 1), k]
                hv = vk[part] - t[jj]
                hs = np.where(jj + 1 < len(t), t[np.minimum(jj + 1, len(t) - 1)] - t[jj], 1.0)
                xv = x0 + (x1 - x0) * hv / hs
                xm = x0 + (x1 - x0) * 0.5 * hv / hs
                gk[part] += hv / 6.0 * (self.g(x0) + 4 * self.g(xm) + self.g(xv))
            if np.any(before):
                gk[before] = G[0, k] - (t[0] - vk[before]) * self.g(vals[0, k])
            out[:, k] = gk
        return out

    def forcing(self, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``F(φ)`` at nodes and step midpoints."""
        G = self._cumulative(vals)
        phi_mid = self._lookup(vals, self.mid[:, None].repeat(self.K, axis=1))
        out = []
        for which, s, co, state in ((0, self.t, self.co_nd, vals), (1, self.mid, self.co_md, phi_mid)):
            fv = self.f(self._lookup(vals, self.ut[which]))
            gs = G if which == 0 else self._cum_at(vals, G, s[:, None].repeat(self.K, axis=1))
            iv = gs - self._cum_at(vals, G, self.ud[which])
            sb = np.einsum("nij,nj->ni", co["B"], fv)
            sc = np.einsum("nij,nj->ni", co["C"], iv)
            out.append(-(sb + sc) * state + co["L"])
        return out[0], out[1]

    def __call__(self, vals: np.ndarray) -> np.ndarray:
        F_nd, F_md = self.forcing(np.asarray(vals, dtype=float))
        a_nd = np.ascontiguousarray(self.co_nd["a"])
        a_md = np.ascontiguousarray(self.co_md["a"])
        x0 = F_nd[0] / a_nd[0]
        return _kernels.diag_forward(self.t, self.line.dense, self.line.mu, a_nd, a_md,
                                     np.ascontiguousarray(F_nd), np.ascontiguousarray(F_md), x0)

    def norm(self, vals: np.ndarray, post_only: bool = True) -> float:
        v = vals[self.post] if post_only and np.any(self.post) else vals
        return float(np.max(np.abs(v))) if v.size else 0.0

    def grid(self, vals: np.ndarray) -> GridFunction:
        return GridFunction(self.model.ts, self.t, vals)


def picard_step(model: SicnnModel, phi: GridFunction | np.ndarray | None = None,
                op: PicardOperator | None = None) -> GridFunction:
    op = PicardOperator(model) if op is None else op
    if isinstance(phi, Trajectory):
        phi = phi.states
    if phi is None:
        vals = np.zeros((len(op.t), model.K))
    elif callable(phi) and not isinstance(phi, GridFunction):
        vals = np.asarray(phi(op.t), dtype=float).reshape(len(op.t), model.K)
    elif isinstance(phi, GridFunction):
        vals = phi.at_many(op.t).reshape(len(op.t), model.K)
    else:
        vals = np.asarray(phi, dtype=float).reshape(len(op.t), model.K)
    return op.grid(op(vals))


def solve_fixed_point(model: SicnnModel, rho: float, tol: float = 1e-6, max_iter: int = 200,
                      op: PicardOperator | None = None, require_h3: bool = True) -> Trajectory:
    """Picard iteration from ``φ0 = 0`` until the sup-norm update is ``<= tol``."""
    if require_h3:
        rep = check_hypotheses(model, rho, spot_checks=False)
        if not rep.h3_ok:
            raise HypothesisError(
                f"third hypothesis fails at rho={rho}: values {rep.h3_value_1:.4g}, {rep.h3_value_2:.4g}")
    op = PicardOperator(model) if op is None else op
    x = np.zeros((len(op.t), model.K))
    prev_step = None
    ratios: list[float] = []
    bad = 0
    for it in range(1, max_iter + 1):
        nx = op(x)
        step = float(np.max(np.abs(nx - x)))
        if prev_step is not None and prev_step > 0:
            ratios.append(step / prev_step)
            bad = bad + 1 if ratios[-1] >= 1.0 else 0
            if bad >= 3:
                raise NonContractionError(
                    "Picard updates grew for 3 consecutive iterations; the third hypothesis likely fails")
        x = nx
        prev_step = step
        if step <= tol:
            break
    residual = float(np.max(np.abs(op(x) - x)))
    gf = op.grid(x)
    meta = {"iterations": it, "last_step": step, "residual": residual,
            "ratio": ratios[-1] if ratios else 0.0, "ratios": ratios, "margin": op.margin,
            "converged": step <= tol}
    return Trajectory(gf, None, float(np.max(np.abs(x))), meta)


def contraction_ratios(model: SicnnModel, rho: float, pairs: int = 20, seed: int = 0,
                       op: PicardOperator | None = None) -> np.ndarray:
    """``‖Tφ - Tψ‖ / ‖φ - ψ‖`` for random pairs in the ``rho``-ball.

    Random iterates are smooth random combinations of the grid's low modes,
    rescaled to sup-norm at most ``rho``; the numerator is measured after the
    burn-in margin.
    """
    op = PicardOperator(model) if op is None else op
    rng = np.random.default_rng(seed)
    t = op.t
    span = max(t[-1] - t[0], 1.0)
    out = []
    for _ in range(pairs):
        vals = []
        for _ in range(2):
            freq = rng.uniform(0.0, 6.0, size=(4, model.K))
            phase = rng.uniform(0, 2 * np.pi, size=(4, model.K))
            amp = rng.normal(size=(4, model.K))
            v = np.sum(amp[None] * np.sin(freq[None] * (t[:, None, None] - t[0]) / span * 2 * np.pi
                                          + phase[None]), axis=1)
            v *= rho * rng.uniform(0.2, 1.0) / max(np.max(np.abs(v)), 1e-300)
            vals.append(v)
        d_in = float(np.max(np.abs(vals[0] - vals[1])))
        d_out = op.norm(op(vals[0]) - op(vals[1]))
        out.append(d_out / d_in)
    return np.asarray(out)
