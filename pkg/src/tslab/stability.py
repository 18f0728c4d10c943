"""Exponential-stability certificates for the delayed SICNN.

For each cell the gain ``W_ij(ω)`` weights the coupling bounds by the delay
factors ``exp(ω δ̄)`` and ``exp(ω τ̄)``; the margin
``S_ij(ω) = a̲_ij - ω - exp(ω sup μ) W_ij(ω)`` starts positive under the
third hypothesis and eventually turns negative.  The decay rate is taken
below every root and below ``min a̲``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .calculus import MuDependent, log_exp_table
from .sicnn import HypothesisError, ModelBounds, SicnnModel, Trajectory, h3_quotients
from .timescale import Timeline

ROOT_TOL = 1e-10
OMEGA_CAP = 1e6
BOUND_SLACK = 1e-9


@dataclass
class StabilityCertificate:
    lam: float
    big_m: float
    xi: np.ndarray
    sup_mu: float
    per_cell_S_at_lambda: np.ndarray
    rho: float = 1.0
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "M": self.big_m if math.isfinite(self.big_m) else "inf",
            "xi": self.xi.tolist(),
            "sup_mu": self.sup_mu,
            "S_at_lambda": self.per_cell_S_at_lambda.tolist(),
            "rho": self.rho,
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, d: dict) -> "StabilityCertificate":
        m = d["M"]
        return cls(float(d["lambda"]), math.inf if m == "inf" else float(m), np.asarray(d["xi"], float),
                   float(d["sup_mu"]), np.asarray(d.get("S_at_lambda", []), float), float(d.get("rho", 1.0)),
                   list(d.get("notes", [])))


def _cell(model: SicnnModel, i: int, j: int) -> int:
    if not (1 <= i <= model.m and 1 <= j <= model.n):
        raise IndexError(f"cell ({i}, {j}) outside {model.m}x{model.n} lattice")
    return (i - 1) * model.n + (j - 1)


def _w(b: ModelBounds, model: SicnnModel, rho: float, omega: float, k: int) -> float:
    fa, ga = model.f_act, model.g_act
    dl = b.delta_upper.reshape(-1)
    tu = b.tau_upper.reshape(-1)
    Bk, Ck = b.B_upper[k], b.C_upper[k]
    return float(np.sum(Bk) * fa.bound * rho
                 + np.sum(Ck * (ga.bound + ga.lipschitz) * dl * rho * np.exp(omega * dl))
                 + np.sum(Bk * fa.lipschitz * rho * np.exp(omega * tu)))


def w_function(model: SicnnModel, rho: float, omega: float, i: int, j: int,
               bounds: ModelBounds | None = None) -> float:
    """Gain ``W_ij(ω)`` (1-based cell indices)."""
    b = model.bounds() if bounds is None else bounds
    return _w(b, model, rho, float(omega), _cell(model, i, j))


def s_function(model: SicnnModel, rho: float, omega: float, i: int, j: int,
               bounds: ModelBounds | None = None) -> float:
    """Margin ``S_ij(ω) = a̲ - ω - exp(ω sup μ) W_ij(ω)``."""
    b = model.bounds() if bounds is None else bounds
    k = _cell(model, i, j)
    mu = model.ts.sup_graininess
    return float(b.a_lower.reshape(-1)[k] - omega - math.exp(omega * mu) * _w(b, model, rho, omega, k))


def _root(S, hi0: float) -> float:
    """Smallest root of a function positive at 0, by doubling then bisection."""
    hi = max(hi0, 1e-3)
    # S is decreasing (every term of W grows with ω), so the first sign change is the root
    while S(hi) >= 0:
        hi *= 2
        if hi > OMEGA_CAP:
            raise HypothesisError(f"no sign change of S below omega={OMEGA_CAP:g}")
    lo = 0.0
    while hi - lo > ROOT_TOL:
        mid = 0.5 * (lo + hi)
        if S(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def decay_rate(model: SicnnModel, rho: float, bounds: ModelBounds | None = None) -> StabilityCertificate:
    b = model.bounds() if bounds is None else bounds
    q1, q2 = h3_quotients(model, rho, b)
    if not (np.max(q1) < rho and np.max(q2) < 1.0):
        raise HypothesisError(
            f"third hypothesis fails at rho={rho}: values {np.max(q1):.4g}, {np.max(q2):.4g}")
    m, n = model.m, model.n
    K = model.K
    mu = float(model.ts.sup_graininess)
    a_lo = b.a_lower.reshape(-1)

    def S(omega: float, k: int) -> float:
        return float(a_lo[k] - omega - math.exp(omega * mu) * _w(b, model, rho, omega, k))

    xi = np.empty(K)
    for k in range(K):
        if S(0.0, k) <= 0:
            raise HypothesisError(f"S(0) <= 0 at cell {divmod(k, n)}")
        xi[k] = _root(lambda w: S(w, k), a_lo[k])
    cap = min(float(np.min(xi)), float(np.min(a_lo)))
    if mu > 0:
        cap = min(cap, (1 - 1e-6) / mu)
    lam = 0.9 * cap
    while not all(S(lam, k) > 0 for k in range(K)):
        lam *= 0.5
        if lam < 1e-300:
            raise HypothesisError("could not find a positive decay rate")
    w0 = np.array([_w(b, model, rho, 0.0, k) for k in range(K)])
    notes = []
    if np.all(w0 == 0):
        big_m = math.inf
        notes.append("W(0) = 0 for every cell: decoupled network, M reported as infinity")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    else:
        with np.errstate(divide="ignore"):
            big_m = float(np.max(np.where(w0 > 0, a_lo / w0, -np.inf)))
    s_lam = np.array([S(lam, k) for k in range(K)])
    return StabilityCertificate(lam, big_m, xi.reshape(m, n), mu, s_lam.reshape(m, n), float(rho), notes)


@dataclass
class BoundReport:
    holds: bool
    worst_ratio: float
    witness: float | None
    t: np.ndarray
    d: np.ndarray
    bound: np.ndarray
    d0: float
    slope: float | None = None
    slope_limit: float | None = None
    slope_ok: bool | None = None

    def to_json(self) -> dict:
        return {"holds": self.holds, "worst_ratio": self.worst_ratio, "witness": self.witness,
                "d0": self.d0, "slope": self.slope, "slope_limit": self.slope_limit,
                "slope_ok": self.slope_ok}

    def to_csv(self, path) -> None:
        from .sicnn import write_csv
        write_csv(path, self.t, np.stack([self.d, self.bound], axis=1), ["d", "bound"])


def _decay_slope(t: np.ndarray, d: np.ndarray, transient: float) -> float | None:
    keep = (t >= t[0] + transient) & (d > 1e-300)
    if np.count_nonzero(keep) < 3:
        return None
    return float(np.polyfit(t[keep], np.log(d[keep]), 1)[0])


def verify_exponential_bound(model: SicnnModel, cert: StabilityCertificate, traj_a: Trajectory,
                             traj_b: Trajectory, t0: float, transient: float | None = None) -> BoundReport:
    """Check ``‖x_a - x_b‖(t) <= M e_{⊖λ}(t, t0) ‖φ_a - φ_b‖ + 1e-9`` at every node ``t >= t0``.

    Also fits the log-slope of the gap after ``transient`` (default: a tenth of
    the window) and compares it with ``log(1 - λ sup μ)/sup μ + 0.05``, or
    ``-λ + 0.05`` on continuous scales.
    """
    ta, tb = traj_a.t, traj_b.t
    if len(ta) != len(tb) or np.max(np.abs(ta - tb)) > 1e-9:
        raise ValueError("trajectories do not share a time grid")
    ha, hb = traj_a.meta.get("history_grid"), traj_b.meta.get("history_grid")
    if ha is None or hb is None or len(ha.t) != len(hb.t):
        raise ValueError("trajectories need matching stored histories")
    d0 = float(np.max(np.abs(ha.values - hb.values)))
    keep = ta >= t0 - 1e-12
    t = ta[keep]
    d = np.max(np.abs(traj_a.x[keep] - traj_b.x[keep]), axis=1)
    lam = cert.lam
    env = _envelope(traj_a, lam, t)
    bound = cert.big_m * env * d0
    gap = d - (bound + BOUND_SLACK)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, d / bound, np.where(d > 0, np.inf, 0.0))
    worst = float(np.max(ratio)) if len(ratio) else 0.0
    ok = bool(np.all(gap <= 0))
    witness = None if ok else float(t[int(np.argmax(gap))])
    tr = (t[-1] - t[0]) / 10 if transient is None else transient
    slope = _decay_slope(t, d, tr)
    mu = cert.sup_mu
    limit = (math.log(1 - lam * mu) / mu if mu > 0 else -lam) + 0.05
    slope_ok = None if slope is None else bool(slope <= limit)
    return BoundReport(ok, worst, witness, t, d, bound, d0, slope, limit, slope_ok)


def _envelope(traj: Trajectory, lam: float, t: np.ndarray) -> np.ndarray:
    """``e_{⊖λ}(t, t[0])`` on the nodes ``t``."""
    p = MuDependent(lambda s, mu: np.broadcast_to(-lam / (1.0 + mu * lam), np.shape(s)))
    return np.exp(log_exp_table(p, Timeline.from_nodes(traj.states.ts, t)))
