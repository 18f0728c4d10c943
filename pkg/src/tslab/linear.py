"""Linear dynamic systems ``x^Δ = A(t) x + f(t)`` on a time scale.

Exponential dichotomies use the Frobenius matrix norm throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .calculus import (CoverageError, GridFunction, MuDependent, RegressivityError,
                       log_exp_table, ominus)
from .expr import CoefficientExpr, bound_estimate, parse
from .timescale import ATOL, TimeScale, Timeline

RK_PER_UNIT = 16
RK_MIN_STEPS = 64


class DichotomyError(ValueError):
    pass


class HorizonError(ValueError):
    """The window is too short to truncate the improper integrals at ``tol``."""

    def __init__(self, message: str, required: float):
        super().__init__(message)
        self.required = required


def as_coeff(v) -> CoefficientExpr | float:
    if isinstance(v, CoefficientExpr):
        return v
    if isinstance(v, (int, float, np.floating)):
        return float(v)
    if isinstance(v, str):
        return parse(v)
    if callable(v):
        return v
    raise TypeError(f"cannot use {v!r} as a coefficient")


def _eval_coeff(c, t: np.ndarray) -> np.ndarray:
    if isinstance(c, float):
        return np.full(t.shape, c)
    if isinstance(c, CoefficientExpr):
        return c.eval_many(t)
    return np.broadcast_to(np.asarray(c(t), dtype=float), t.shape)


@dataclass(eq=False)
class LinearSystem:
    """``x^Δ = A(t) x + f(t)`` with ``A`` an ``n×n`` and ``f`` an ``n`` table of coefficients."""

    A: Sequence[Sequence]
    f: Sequence
    ts: TimeScale
    validate: bool = True
    n: int = field(init=False)

    def __post_init__(self):
        self.A = [[as_coeff(v) for v in row] for row in self.A]
        self.n = len(self.A)
        if any(len(row) != self.n for row in self.A):
            raise ValueError("A must be square")
        if self.f is None:
            self.f = [0.0] * self.n
        self.f = [as_coeff(v) for v in self.f]
        if len(self.f) != self.n:
            raise ValueError("f must have the dimension of A")
        if self.validate:
            pts = self.ts.sample_points(per_unit=8)
            mu = self.ts.graininess_many(pts)
            sc = mu > 0
            if np.any(sc):
                m = np.eye(self.n) + mu[sc, None, None] * self.A_at(pts[sc])
                det = np.linalg.det(m)
                if np.any(np.abs(det) < 1e-14):
                    w = pts[sc][np.argmin(np.abs(det))]
                    raise RegressivityError(f"I + mu A is singular at t={w!r}")

    def A_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), self.n, self.n))
        for i, row in enumerate(self.A):
            for j, c in enumerate(row):
                out[:, i, j] = _eval_coeff(c, t)
        return out

    def f_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), self.n))
        for i, c in enumerate(self.f):
            out[:, i] = _eval_coeff(c, t)
        return out

    def with_forcing(self, f: Sequence) -> "LinearSystem":
        return LinearSystem(self.A, f, self.ts, validate=False)


def default_timeline(ts: TimeScale, refine: int = 1) -> Timeline:
    return ts.discretize(per_unit=RK_PER_UNIT * refine, min_steps=RK_MIN_STEPS * refine)


def _mid(line: Timeline) -> np.ndarray:
    t = line.t
    m = t.copy()
    m[:-1] = 0.5 * (t[:-1] + t[1:])
    return m


def fundamental_matrix(sys: LinearSystem, t0: float, line: Timeline | None = None) -> GridFunction:
    """``X`` with ``X(t0) = I`` on the whole window, as a matrix-valued grid function."""
    line = default_timeline(sys.ts) if line is None else line
    i0 = line.index_of(float(t0))
    n = sys.n
    a_node = sys.A_at(line.t)
    a_mid = sys.A_at(_mid(line))
    zero = np.zeros((len(line), n, n))
    sc = ~line.dense[:-1]
    if np.any(sc):
        det = np.linalg.det(np.eye(n) + line.mu[:-1][sc, None, None] * a_node[:-1][sc])
        if np.any(np.abs(det) < 1e-14):
            raise RegressivityError("I + mu A is singular on the window")
    eye = np.eye(n)
    x = _kernels.affine_forward(line.t, line.dense, line.mu, a_node, a_mid, zero, zero, zero,
                                eye, i0)
    x = _kernels.affine_backward(line.t, line.dense, line.mu, a_node, a_mid, zero, zero, zero,
                                 eye, i0, x)
    return GridFunction(sys.ts, line.t, x, {"t0": float(t0)})


# -- dichotomy ---------------------------------------------------------------------

@dataclass(eq=False)
class DichotomyData:
    P: np.ndarray
    k: float
    alpha: float
    fundamental: GridFunction | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if not np.allclose(self.P @ self.P, self.P, atol=1e-10, rtol=0.0):
            raise DichotomyError("P is not a projection")
        if not (self.k > 0 and self.alpha > 0):
            raise DichotomyError("k and alpha must be positive")


@dataclass
class DichotomyReport:
    holds: bool
    worst_margin_forward: float
    worst_margin_backward: float
    witness_forward: tuple[float, float] | None
    witness_backward: tuple[float, float] | None
    pairs_checked: int


def _frob(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))


def check_dichotomy(sys: LinearSystem, data: DichotomyData, sample_pairs: int = 1000,
                    seed: int = 0, tol: float = 1e-9) -> DichotomyReport:
    """Sample ``(t, s)`` pairs and compare both dichotomy inequalities.

    Forward: ``|X(t) P X^{-1}(σ(s))| <= k e_{⊖α}(t, σ(s))`` for ``t >= σ(s)``.
    Backward: ``|X(t)(I-P) X^{-1}(σ(s))| <= k e_{⊖α}(σ(s), t)`` for ``t <= σ(s)``.
    Margins are ``bound - norm``; the check holds iff both are ``>= -tol``.
    """
    X = data.fundamental if data.fundamental is not None else fundamental_matrix(sys, sys.ts.start)
    line = Timeline.from_nodes(sys.ts, X.t)
    N = len(line)
    logenv = log_exp_table(ominus(float(data.alpha)), line)
    xs = X.values
    if np.any(np.abs(np.linalg.det(xs)) == 0.0):
        raise DichotomyError("singular fundamental matrix sample")
    xinv = np.linalg.inv(xs)
    # σ(s) as a node index
    sig = np.arange(N)
    sig[:-1] = np.where(line.dense[:-1], sig[:-1], sig[:-1] + 1)
    rng = np.random.default_rng(seed)
    P = data.P
    Q = np.eye(sys.n) - P

    def margins(proj, forward):
        a = rng.integers(0, N, size=sample_pairs)
        b = rng.integers(0, N, size=sample_pairs)
        j = sig[b]
        if forward:
            ti = np.maximum(a, j)
            lo, hi = j, ti
        else:
            ti = np.minimum(a, j)
            lo, hi = ti, j
        m = xs[ti] @ proj @ xinv[j]
        bound = data.k * np.exp(logenv[hi] - logenv[lo])
        marg = bound - _frob(m)
        w = int(np.argmin(marg))
        return float(marg[w]), (float(line.t[ti[w]]), float(line.t[b[w]]))

    mf, wf = margins(P, True)
    mb, wb = margins(Q, False)
    return DichotomyReport(bool(mf >= -tol and mb >= -tol), mf, mb, wf, wb, 2 * sample_pairs)


def diagonal_dichotomy(c: Sequence, ts: TimeScale, samples: int | None = None) -> DichotomyData:
    """Dichotomy data for ``x^Δ = -diag(c(t)) x``: ``P = I``, ``α = min inf c_i``.

    ``k`` is the Frobenius norm of the identity, ``sqrt(n)``, so that the
    bound also holds at ``t = σ(s)``.  The fundamental matrix is
    ``diag(e_{-c_i}(t, t0))`` with ``t0`` the node nearest the window centre.
    """
    cs = [as_coeff(v) for v in c]
    n = len(cs)
    infs = []
    line = default_timeline(ts)
    for ci in cs:
        if isinstance(ci, float):
            infs.append(ci)
        elif isinstance(ci, CoefficientExpr):
            infs.append(bound_estimate(ci, ts, samples).inf_value)
        else:
            infs.append(float(np.min(_eval_coeff(ci, ts.sample_points()))))
    m_tilde = min(infs)
    if not m_tilde > 0:
        raise DichotomyError(f"min inf c_i = {m_tilde} <= 0")
    sc = ~line.dense[:-1]
    for i, ci in enumerate(cs):
        v = _eval_coeff(ci, line.t[:-1][sc])
        arg = 1.0 - line.mu[:-1][sc] * v
        if np.any(arg <= 0):
            w = line.t[:-1][sc][np.argmin(arg)]
            raise RegressivityError(f"-c_{i + 1} is not positively regressive at t={w!r}")
    i0 = int(np.argmin(np.abs(line.t - 0.5 * (line.t[0] + line.t[-1]))))
    X = np.zeros((len(line), n, n))
    for i, ci in enumerate(cs):
        tab = log_exp_table(_neg(ci), line)
        X[:, i, i] = np.exp(tab - tab[i0])
    fund = GridFunction(ts, line.t, X, {"t0": float(line.t[i0])})
    return DichotomyData(np.eye(n), math.sqrt(n), float(m_tilde), fund)


def _neg(c):
    if isinstance(c, float):
        return -c
    if isinstance(c, CoefficientExpr):
        return MuDependent(lambda t, mu: -c.eval_many(t))
    return MuDependent(lambda t, mu: -np.asarray(c(t), dtype=float))


def diagonal_system(c: Sequence, ts: TimeScale, f: Sequence | None = None) -> LinearSystem:
    """``x^Δ = -diag(c) x + f``."""
    cs = [as_coeff(v) for v in c]
    n = len(cs)
    A = [[0.0] * n for _ in range(n)]
    for i, ci in enumerate(cs):
        A[i][i] = _neg_coeff(ci)
    return LinearSystem(A, f if f is not None else [0.0] * n, ts)


def _neg_coeff(c):
    if isinstance(c, float):
        return -c
    if isinstance(c, CoefficientExpr):
        return parse(f"-({c})", c.var)
    return lambda t: -np.asarray(c(t), dtype=float)


# -- invertibility checks ----------------------------------------------------------------

@dataclass
class PreconditionReport:
    max_inv_A: float
    max_inv_I_mu_A: float
    A_singular_at: list[float]
    I_mu_A_singular_at: list[float]

    @property
    def bounded(self) -> bool:
        return not self.A_singular_at and not self.I_mu_A_singular_at and \
            math.isfinite(self.max_inv_A) and math.isfinite(self.max_inv_I_mu_A)


def lemma41_preconditions(sys: LinearSystem, probe: int = 1000, cond_cap: float = 1e12) -> PreconditionReport:
    """Sampled sup of ``|A^{-1}(t)|`` and ``|(I + mu(t) A(t))^{-1}|`` with singularity flags."""
    pts = sys.ts.sample_points(samples=probe)
    mu = sys.ts.graininess_many(pts)
    A = sys.A_at(pts)
    M = np.eye(sys.n) + mu[:, None, None] * A

    def scan(mats):
        cond = np.linalg.cond(mats)
        bad = ~np.isfinite(cond) | (cond > cond_cap)
        good = ~bad
        sup = float(np.max(_frob(np.linalg.inv(mats[good])))) if np.any(good) else math.inf
        if np.any(bad):
            sup = math.inf
        return sup, [float(x) for x in pts[bad][:10]]

    a_sup, a_bad = scan(A)
    m_sup, m_bad = scan(M)
    return PreconditionReport(a_sup, m_sup, a_bad, m_bad)


# -- bounded solution -----------------------------------------------------------------

def _decay_rate(alpha: float, mu_bar: float) -> float:
    return math.log1p(mu_bar * alpha) / mu_bar if mu_bar > 0 else alpha


def bounded_solution(sys: LinearSystem, data: DichotomyData, tol: float = 1e-6) -> GridFunction:
    """The bounded solution ``∫_{-∞}^t X P X^{-1}(σ s) f Δs - ∫_t^∞ X (I-P) X^{-1}(σ s) f Δs``.

    The P-part is integrated forward from the window start and the
    (I-P)-part backward from the window end, both from zero.  Truncation
    error at ``t`` is bounded by ``k F (1 + μ̄α)/α · e_{⊖α}(t, start)`` and
    ``k F/α · e_{⊖α}(end, t)`` with ``F = sup|f|``.  Only nodes where the sum
    of both bounds is ``<= tol`` are returned; ``meta['tail_bound']`` holds
    the largest bound over them.
    """
    ts = sys.ts
    n = sys.n
    P = data.P
    eye = np.eye(n)
    has_fwd = not np.allclose(P, 0.0)
    has_bwd = not np.allclose(P, eye)
    fine = default_timeline(ts, refine=2)
    tf = fine.t
    # coarse nodes: every other node inside each component
    first = np.r_[0, np.flatnonzero(np.diff(fine.comp)) + 1]
    offset = np.arange(len(tf)) - np.repeat(first, np.diff(np.r_[first, len(tf)]))
    ci = np.flatnonzero(offset % 2 == 0)
    line = Timeline.from_nodes(ts, tf[ci])
    nxt = np.minimum(ci + 1, len(tf) - 1)
    mid_i = np.where(line.dense, nxt, ci)
    sig_i = np.r_[ci[1:], ci[-1]]

    f_fine = sys.f_at(tf)
    a_fine = sys.A_at(tf)
    F = float(np.max(np.abs(f_fine))) if f_fine.size else 0.0
    if has_fwd and has_bwd:
        X = fundamental_matrix(sys, tf[len(tf) // 2], fine).values
        Qp = X @ P @ np.linalg.inv(X)
    else:
        Qp = np.broadcast_to(P, (len(tf), n, n))
    Qm = eye - Qp

    def forcing(Q):
        g_node = np.einsum("kij,kj->ki", Q[ci], f_fine[ci])[:, :, None]
        g_mid = np.einsum("kij,kj->ki", Q[mid_i], f_fine[mid_i])[:, :, None]
        g_jump = np.einsum("kij,kj->ki", Q[sig_i], f_fine[ci])[:, :, None]
        return g_node, g_mid, g_jump

    a_node = np.ascontiguousarray(a_fine[ci])
    a_mid = np.ascontiguousarray(a_fine[mid_i])
    x = np.zeros((len(line), n, 1))
    mu_bar = ts.sup_graininess
    alpha, k = float(data.alpha), float(data.k)
    logenv = log_exp_table(ominus(alpha), line)
    left = np.zeros(len(line))
    right = np.zeros(len(line))
    if has_fwd and F > 0:
        g = forcing(Qp)
        x += _kernels.affine_forward(line.t, line.dense, line.mu, a_node, a_mid, *g,
                                     np.zeros((n, 1)), 0)
        left = k * F * (1.0 + mu_bar * alpha) / alpha * np.exp(logenv - logenv[0])
    if has_bwd and F > 0:
        g = forcing(Qm)
        z = np.zeros_like(x)
        z = _kernels.affine_backward(line.t, line.dense, line.mu, a_node, a_mid, *g,
                                     np.zeros((n, 1)), len(line) - 1, z)
        x += z
        right = k * F / alpha * np.exp(logenv[-1] - logenv)
    bound = left + right
    ok = bound <= tol
    if not np.any(ok):
        rate = _decay_rate(alpha, mu_bar)
        need = 0.0
        if has_fwd:
            need += math.log(k * F * (1.0 + mu_bar * alpha) / (alpha * tol)) / rate
        if has_bwd:
            need += math.log(k * F / (alpha * tol)) / rate
        raise HorizonError(
            f"window [{ts.start}, {ts.end}] too short for tol={tol}: need length > {need:.4g}",
            need)
    idx = np.flatnonzero(ok)
    lo, hi = idx[0], idx[-1]
    sel = slice(lo, hi + 1)
    meta = {"tail_bound": float(np.max(bound[sel])), "cutoff_left": float(line.t[0]),
            "cutoff_right": float(line.t[-1]), "tol": tol}
    out = GridFunction(ts, line.t[sel], x[sel, :, 0], meta)
    return out


def residuals(sys: LinearSystem, x: GridFunction) -> tuple[float, float]:
    """Worst scattered residual (relative to ``1+|x|``) and worst dense FD residual."""
    line = Timeline.from_nodes(sys.ts, x.t)
    A = sys.A_at(x.t)
    f = sys.f_at(x.t)
    v = x.values.reshape(len(x.t), -1)
    rhs = np.einsum("kij,kj->ki", A, v) + f
    sc = np.flatnonzero(~line.dense[:-1])
    worst_s = 0.0
    if len(sc):
        pred = v[sc] + line.mu[sc, None] * rhs[sc]
        err = np.abs(v[sc + 1] - pred) / (1.0 + np.abs(v[sc]))
        worst_s = float(np.max(err))
    worst_d = 0.0
    d = line.dense
    # fourth-order central stencil on uniform dense runs of five nodes
    if len(d) > 4:
        run = d[:-4] & d[1:-3] & d[2:-2] & d[3:-1]
        inner = np.flatnonzero(run) + 2
        h = x.t[inner] - x.t[inner - 1]
        uniform = np.abs((x.t[inner + 2] - x.t[inner - 2]) - 4 * h) <= 1e-9 * (1 + np.abs(x.t[inner]))
        inner, h = inner[uniform], h[uniform]
        if len(inner):
            dv = (v[inner - 2] - 8 * v[inner - 1] + 8 * v[inner + 1] - v[inner + 2]) / (12 * h[:, None])
            worst_d = float(np.max(np.abs(dv - rhs[inner])))
    return worst_s, worst_d
