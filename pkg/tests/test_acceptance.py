"""Acceptance criteria: one PASS/FAIL line per criterion, at the documented tolerances.

Run ``pytest tests/test_acceptance.py -v`` or this file as a script.
"""

import math
import time

import numpy as np
import pytest

from tslab import automorphy as aa
from tslab.calculus import GridFunction, delta_integral, ominus, ts_exp
from tslab.cli import verify_payload
from tslab.config import example_path, load_example
from tslab.expr import parse
from tslab.linear import (DichotomyData, LinearSystem, bounded_solution, check_dichotomy,
                          diagonal_dichotomy, diagonal_system, residuals)
from tslab.sicnn import (Activation, History, PicardOperator, _replace, check_hypotheses,
                         contraction_ratios, simulate, solve_fixed_point)
from tslab.stability import decay_rate, verify_exponential_bound
from tslab.timescale import make_timescale

RESULTS: dict[int, tuple[bool, float, str]] = {}


def _emit(line: str, capsys=None) -> None:
    if capsys is None:
        print(line, flush=True)
        return
    with capsys.disabled():
        print("\n" + line, flush=True)


def _report(num: int, title: str, limit: float, fn, capsys=None) -> None:
    start = time.perf_counter()
    ok, detail = fn()
    secs = time.perf_counter() - start
    fast = secs < limit
    passed = bool(ok and fast)
    RESULTS[num] = (passed, secs, detail)
    timing = f"{secs:.2f}s < {limit:g}s" if fast else f"{secs:.2f}s exceeds {limit:g}s"
    line = f"[criterion {num:2d}] {'PASS' if passed else 'FAIL'}  {title}: {detail} ({timing})"
    _emit(line, capsys)
    assert passed, line


# -- 1, 2: bundled example constants -----------------------------------------------------------

def _example(example_id: int, ref: tuple[float, float, float]):
    def run():
        p = verify_payload(example_id)
        rows = {r["quantity"]: r for r in p["rows"]}
        la, q1, q2 = (rows[k]["computed"] for k in ("max L/a", "H3 value 1", "H3 value 2"))
        ok = (la == ref[0] and abs(q1 - ref[1]) <= 0.05 and abs(q2 - ref[2]) <= 0.05
              and p["h3_ok"] and p["verdict"] and len(p["per_cell"]) == 9)
        detail = (f"max L/a {la!r} (want {ref[0]}), Q1 {q1:.4f} (want {ref[1]}+-0.05), "
                  f"Q2 {q2:.4f} (want {ref[2]}+-0.05), H3 at rho=1 {'ok' if p['h3_ok'] else 'fails'}, "
                  f"verdict {'PASS' if p['verdict'] else 'FAIL'}")
        return ok, detail
    return run


def test_criterion_01_example_one(capsys):
    _report(1, "example 1 constants", 10, _example(1, (0.25, 0.2669, 0.5337)), capsys)


def test_criterion_02_example_two(capsys):
    _report(2, "example 2 constants", 10, _example(2, (0.15, 0.1904, 0.3657)), capsys)


# -- 3: exponential oracles --------------------------------------------------------------------

SCALES = {
    "reals": make_timescale("reals", 0, 50),
    "integers": make_timescale("integers", 0, 50),
    "step": make_timescale("step", 0, 50, h=0.5),
    "periodic_union": make_timescale("periodic_union", 0, 50, a=1, b=1),
}


def _exponential_oracles():
    rng = np.random.default_rng(3)
    Z, R = SCALES["integers"], SCALES["reals"]
    worst_z = worst_r = worst_id = 0.0
    for _ in range(100):
        c0, c1, w = rng.uniform(-0.4, 0.8), rng.uniform(0, 0.5), rng.uniform(0.2, 2.0)
        if c0 - c1 <= -1 + 1e-3:
            c1 = 0.5 * (c0 + 1)
        p = parse(f"{c0!r} + {c1!r}*sin({w!r}*t)")
        s = int(rng.integers(0, 25))
        t = s + int(rng.integers(0, 26))
        prod = math.prod(1.0 + p.eval(k) for k in range(s, t))
        worst_z = max(worst_z, abs(ts_exp(p, Z, t, s) / prod - 1))
        sr, tr = sorted(rng.uniform(0, 10, 2))
        exact = c0 * (tr - sr) - c1 / w * (math.cos(w * tr) - math.cos(w * sr))
        worst_r = max(worst_r, abs(ts_exp(p, R, tr, sr) - math.exp(exact)))
    for ts in SCALES.values():
        pts = ts.sample_points(per_unit=4)
        for _ in range(30):
            r, s, t = np.sort(rng.choice(pts[pts <= 20], 3))
            p = parse(f"{rng.uniform(-0.4, 0.9)!r} + 0.3*cos(t)")
            semi = ts_exp(p, ts, t, s) * ts_exp(p, ts, s, r) / ts_exp(p, ts, t, r) - 1
            recip = ts_exp(ominus(p), ts, t, s) * ts_exp(p, ts, t, s) - 1
            worst_id = max(worst_id, abs(semi), abs(recip))
    ok = worst_z <= 1e-12 and worst_r <= 1e-6 and worst_id <= 1e-9
    return ok, (f"Z product rel err {worst_z:.1e}, R exp err {worst_r:.1e}, "
                f"semigroup/reciprocal err {worst_id:.1e} on 4 generators")


def test_criterion_03_exponential(capsys):
    _report(3, "exponential oracles", 30, _exponential_oracles, capsys)


# -- 4: delta-integral brute force -----------------------------------------------------------------

def _integral_oracles():
    rng = np.random.default_rng(4)
    Z = SCALES["integers"]
    exact = True
    for _ in range(50):
        c = rng.normal(size=3)
        f = lambda t, c=c: c[0] + c[1] * np.sin(c[2] * t)
        a = int(rng.integers(0, 25))
        b = a + int(rng.integers(0, 25))
        want = math.fsum(f(float(k)) for k in range(a, b))
        exact &= delta_integral(f, a, b, Z) == want
    pu = make_timescale("periodic_union", 0, 20, a=1, b=1)
    f = lambda t: np.exp(-0.1 * t) * np.cos(3 * t) + t ** 2 / 50
    lo, hi = 0.0, 19.0
    # midpoint oracle: 10^6 points spread over the dense components, plus the jump sum
    comps = [(max(a, lo), min(b, hi)) for a, b in pu.intervals if min(b, hi) - max(a, lo) > 0]
    per = 10 ** 6 // len(comps)
    mid = 0.0
    for a, b in comps:
        h = (b - a) / per
        mid += h * math.fsum(f(a + h * (np.arange(per) + 0.5)))
    jumps = [b for a, b in pu.intervals[:-1] if lo <= b < hi]
    mid += math.fsum(1.0 * f(s) for s in jumps)
    got = delta_integral(f, lo, hi, pu)
    err = abs(got - mid)
    return exact and err <= 1e-6, f"Z Riemann sums exact: {exact}; PU vs 1e6-point midpoint {err:.1e}"


def test_criterion_04_integral(capsys):
    _report(4, "delta-integral brute force", 30, _integral_oracles, capsys)


# -- 5: bounded solutions ------------------------------------------------------------------------

def _bounded():
    Z = make_timescale("integers", 0, 100)
    R = make_timescale("reals", 0, 40)
    sz = diagonal_system([0.5], Z, [1.0])
    xz = bounded_solution(sz, diagonal_dichotomy([0.5], Z), tol=1e-6)
    ez = float(np.max(np.abs(xz.values - 2)))
    sr = diagonal_system([1.0], R, [1.0])
    xr = bounded_solution(sr, diagonal_dichotomy([1.0], R), tol=1e-6)
    er = float(np.max(np.abs(xr.values - 1)))
    rz, rr = residuals(sz, xz), residuals(sr, xr)
    ok = ez <= 1e-6 + xz.meta["tail_bound"] and er <= 1e-6 and max(rz + rr) <= 1e-6
    return ok, (f"Z |x-2| {ez:.1e} (tail bound {xz.meta['tail_bound']:.1e}), R |x-1| {er:.1e}, "
                f"worst residual {max(rz + rr):.1e}")


def test_criterion_05_bounded_solution(capsys):
    _report(5, "bounded-solution oracle", 10, _bounded, capsys)


# -- 6: dichotomies --------------------------------------------------------------------------------

def _dichotomy():
    margins = []
    for example_id in (1, 2):
        model, data = load_example(example_id)
        c = [e for row in data["coefficients"]["a"] for e in row]
        rep = check_dichotomy(diagonal_system(c, model.ts), diagonal_dichotomy(c, model.ts),
                              sample_pairs=1000)
        margins.append(min(rep.worst_margin_forward, rep.worst_margin_backward))
    Z = make_timescale("integers", 0, 80)
    bad = check_dichotomy(LinearSystem([[-0.5]], [0], Z), DichotomyData([[1.0]], 1.0, 1.5), 1000)
    ok = all(m >= 0 for m in margins) and not bad.holds and bad.witness_forward is not None
    return ok, (f"example margins {margins[0]:.2e}, {margins[1]:.2e}; alpha=1.5 case "
                f"{'rejected' if not bad.holds else 'accepted'} at (t, s) = {bad.witness_forward}")


def test_criterion_06_dichotomy(capsys):
    _report(6, "dichotomy verification", 10, _dichotomy, capsys)


# -- 7: contraction ------------------------------------------------------------------------------------

def _contraction():
    model, _ = load_example(2)
    op = PicardOperator(model)
    ratio = float(np.max(contraction_ratios(model, 1.0, pairs=20, op=op)))
    sol = solve_fixed_point(model, 1.0, tol=1e-6, op=op)
    res = float(np.max(np.abs(op(sol.x) - sol.x)))
    ok = ratio <= 0.3657 + 0.05 and res <= 2e-6
    return ok, f"max ratio {ratio:.4f} (<= 0.4157), |Tx*-x*| {res:.1e} after {sol.meta['iterations']} iterations"


def test_criterion_07_contraction(capsys):
    _report(7, "Picard contraction", 60, _contraction, capsys)


# -- 8: exponential stability ----------------------------------------------------------------------

def _stability():
    model, _ = load_example(2)
    cert = decay_rate(model, 1.0)
    a = simulate(model, History.constant(0.2, 9), 0, 200)
    b = simulate(model, History.constant(-0.2, 9), 0, 200)
    rep = verify_exponential_bound(model, cert, a, b, 0.0)
    limit = math.log(1 - cert.lam) + 0.05
    ok = rep.holds and rep.slope is not None and rep.slope <= limit
    return ok, (f"lambda {cert.lam:.6f}, M {cert.big_m:.3f}, worst d/bound {rep.worst_ratio:.3f}, "
                f"slope {rep.slope:.4f} <= {limit:.4f}")


def test_criterion_08_stability(capsys):
    _report(8, "exponential stability", 60, _stability, capsys)


# -- 9: automorphy evidence --------------------------------------------------------------------------

def _automorphy():
    checks = {}
    core = make_timescale("reals", 0, 60)
    const = aa.test_almost_automorphic(lambda t: np.full(np.shape(t), 3.0), [1.0, 2.0, 5.0], core, 1e-9)
    checks["constant"] = const.passed
    qp = parse("sin(t)+sin(sqrt(2)*t)")
    pool = aa.near_returns(qp, make_timescale("reals", 0, 100), (1, 2e5), 0.05, 0.0025, max_count=12)
    checks["quasi-periodic at 0.01"] = aa.test_almost_automorphic(qp, pool, core, 0.01).passed
    ident = aa.test_almost_automorphic(lambda t: np.asarray(t, float), [1.0, 2.0, 3.0], core, 0.01)
    checks["t rejected"] = not ident.passed

    eps = 0.05
    win = make_timescale("reals", -11400, 11400)
    small = aa.near_returns(qp, win, (1, 11300), 0.05, eps / 4, max_count=10)
    f = GridFunction.sample(win, qp, per_unit=32)
    g = GridFunction.sample(win, parse("cos(t)+0.5*cos(sqrt(2)*t)"), per_unit=32)
    vf = aa.test_almost_automorphic(f, small, core, eps)
    vg = aa.test_almost_automorphic(g, small, core, eps)
    kept = vf.subsequence
    t = lambda h, e: aa.test_almost_automorphic(h, kept, core, e).passed
    alpha = -1.5
    checks["sum"] = vf.passed and vg.passed and t(aa.pointwise_combine(f, g, aa.Sum()), 2 * eps)
    checks["scale"] = t(aa.pointwise_combine(f, None, aa.Scale(alpha)), (1 + abs(alpha)) * 2 * eps)
    checks["translate"] = t(aa.pointwise_combine(f, None, aa.Translate(2.0)), 2 * eps)
    checks["product"] = t(aa.pointwise_combine(f, g, aa.Product()), (f.sup_norm() + g.sup_norm()) * 2 * eps)
    checks["composition"] = t(aa.pointwise_combine(f, None, aa.ComposeOuter(lambda u: 2 * np.sin(u))),
                              2 * 2 * eps)
    partial = lambda n: parse(" + ".join(f"{2.0 ** -k}*(sin({k}*t)+sin({k}*sqrt(2)*t))"
                                         for k in range(1, n + 1)))
    terms_ok = all(aa.test_almost_automorphic(partial(n), small, core, 2 * eps).passed for n in (1, 2, 3))
    checks["uniform limit"] = terms_ok and aa.test_almost_automorphic(partial(30), small, core,
                                                                      3 * 2 * eps).passed
    gr = [aa.graininess_automorphy_test(make_timescale("integers", 0, 40), [1, 2, 3], 1e-12),
          aa.graininess_automorphy_test(make_timescale("reals", 0, 40), [0.5, 1, 2], 1e-12),
          aa.graininess_automorphy_test(make_timescale("periodic_union", 0, 40, a=1, b=1), [2, 4, 6], 0.0)]
    checks["graininess"] = all(v.passed for v in gr)
    failed = [k for k, v in checks.items() if not v]
    return not failed, f"{len(checks) - len(failed)}/{len(checks)} checks" + (
        f", failed: {', '.join(failed)}" if failed else "")


def test_criterion_09_automorphy(capsys):
    _report(9, "automorphy evidence", 60, _automorphy, capsys)


# -- 10: zero equilibrium ------------------------------------------------------------------------------

def _zero():
    model, _ = load_example(2)
    f = Activation.from_text("0.05*sin(x)", 0.05, 0.05)
    g = Activation.from_text("x/20", 0.05, 0.05)
    zero = _replace(model, L=[["0"] * 3] * 3, f_act=f, g_act=g, declared={})
    worst = 0.0
    for gen, kw in (("reals", {}), ("integers", {}), ("step", {"h": 0.5}),
                    ("periodic_union", {"a": 1, "b": 1})):
        m = zero.with_ts(make_timescale(gen, -4, 30, **kw))
        tr = simulate(m, History.constant(0.0, 9), 0, 30)
        worst = max(worst, tr.sup_norm)
    return worst <= 1e-12, f"max |x| = {worst!r} on 4 generators"


def test_criterion_10_zero_equilibrium(capsys):
    _report(10, "zero equilibrium", 5, _zero, capsys)


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn(None)
            except AssertionError:
                pass
    print(f"{sum(ok for ok, _, _ in RESULTS.values())}/{len(RESULTS)} criteria pass")
