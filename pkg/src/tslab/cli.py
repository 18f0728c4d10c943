"""Command-line interface: ``tslab check|stability|simulate|picard|automorphy-test|verify-paper|ts``.

Every command builds a JSON-able payload first; the human summary is rendered
from that payload alone, so ``--json`` output reproduces the printed numbers.
Exit codes: 0 success, 1 checked and failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import _accel
from .automorphy import near_returns, test_almost_automorphic
from .config import ConfigError, example_path, load_model
from .expr import ExprSyntaxError, parse
from .sicnn import (DelayError, History, HypothesisError, NonContractionError, PicardOperator,
                    SicnnModel, check_hypotheses, contraction_ratios, simulate, solve_fixed_point)
from .stability import decay_rate, verify_exponential_bound
from .timescale import TimeScaleError, make_timescale

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _f(x) -> str:
    """Shortest round-trip text for numbers (``inf`` for infinities)."""
    if isinstance(x, str):
        return x
    if x is None:
        return "n/a"
    x = float(x)
    return repr(x) if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _finite(x):
    return x if (x is None or isinstance(x, str) or math.isfinite(x)) else ("inf" if x > 0 else "-inf")


def _model(args) -> tuple[SicnnModel, dict]:
    if not args.config:
        raise UsageError("--config is required")
    return load_model(args.config)


def _rho(args, data: dict) -> float:
    rho = args.rho if args.rho is not None else data.get("rho", 1.0)
    if not rho > 0:
        raise UsageError("--rho must be positive")
    return float(rho)


def _radii(rho: float, sweep: int | None) -> list[float]:
    if not sweep or sweep <= 1:
        return [rho]
    return [float(r) for r in np.geomspace(rho / 10, rho * 10, sweep)]


def _fan_out(fn, items: list) -> list:
    """Independent runs in worker threads; results come back in input order."""
    if len(items) == 1:
        return [fn(items[0])]
    with ThreadPoolExecutor(max_workers=min(len(items), 4)) as pool:
        return list(pool.map(fn, items))


# -- check -----------------------------------------------------------------------------------

def _check_payload(model: SicnnModel, rho: float) -> dict:
    return check_hypotheses(model, rho).to_json()


def _render_check(p: dict) -> list[str]:
    lines = [f"rho = {_f(p['rho'])}",
             f"H1 (regressivity + automorphy evidence): {'ok' if p['h1_ok'] else 'FAIL'}",
             f"H2 (activation constants): {'ok' if p['h2_ok'] else 'FAIL'}"]
    for name, d in p["h2"].items():
        bad = [k[:-3] for k, v in d.items() if k.endswith("_ok") and not v]
        if bad:
            lines.append(f"  {name}: fails {', '.join(bad)} (value at 0 = {_f(d['value_at_zero'])})")
    lines.append(f"max L/a = {_f(p['max_L_over_a'])}")
    lines.append(f"H3 value 1 = {_f(p['h3_value_1'])} (< rho required)")
    lines.append(f"H3 value 2 = {_f(p['h3_value_2'])} (< 1 required)")
    lines.append("  cell      Q1                      Q2")
    for row in p["per_cell"]:
        i, j = row["cell"]
        lines.append(f"  ({i},{j})  {_f(row['q1']):<22}  {_f(row['q2'])}")
    lines.append(f"H3: {'PASS' if p['h3_ok'] else 'FAIL'}")
    return lines


def cmd_check(args) -> int:
    model, data = _model(args)
    radii = _radii(_rho(args, data), args.sweep)
    payloads = _fan_out(lambda r: _check_payload(model, r), radii)
    _emit(args, payloads, _render_check)
    return EXIT_OK if all(p["h3_ok"] for p in payloads) else EXIT_FAIL


def run_check(config_path: str, rho: float | None = None, json_out: bool = False) -> int:
    argv = ["check", "--config", str(config_path)] + (["--rho", str(rho)] if rho is not None else [])
    return main(argv + (["--json"] if json_out else []))


# -- stability ------------------------------------------------------------------------------

def _stability_payload(model: SicnnModel, rho: float) -> dict:
    try:
        cert = decay_rate(model, rho)
    except HypothesisError as exc:
        return {"rho": rho, "ok": False, "error": str(exc)}
    d = cert.to_json()
    d.update({"ok": True, "min_xi": float(np.min(cert.xi))})
    return d


def _render_stability(p: dict) -> list[str]:
    if not p["ok"]:
        return [f"rho = {_f(p['rho'])}", f"no certificate: {p['error']}"]
    lines = [f"rho = {_f(p['rho'])}", f"lambda = {_f(p['lambda'])}", f"M = {_f(p['M'])}",
             f"min xi = {_f(p['min_xi'])}", f"sup mu = {_f(p['sup_mu'])}"]
    lines += [f"note: {n}" for n in p.get("notes", [])]
    if "pair" in p:
        v = p["pair"]
        lines.append(f"exponential bound on [{_f(v['t0'])}, {_f(v['t_end'])}]: "
                     f"{'holds' if v['holds'] else 'VIOLATED'} (worst d/bound = {_f(v['worst_ratio'])})")
        if v["witness"] is not None:
            lines.append(f"  witness t = {_f(v['witness'])}")
        lines.append(f"  log-slope {_f(v['slope'])} vs limit {_f(v['slope_limit'])}")
    return lines


def cmd_stability(args) -> int:
    model, data = _model(args)
    radii = _radii(_rho(args, data), args.sweep)
    payloads = _fan_out(lambda r: _stability_payload(model, r), radii)
    if args.pair and payloads[0]["ok"]:
        from .stability import StabilityCertificate
        cert = StabilityCertificate.from_json(payloads[0])
        t0, t_end = _span(args, model)
        ha, hb = (_history(h, model) for h in args.pair)
        ta, tb = simulate(model, ha, t0, t_end), simulate(model, hb, t0, t_end)
        rep = verify_exponential_bound(model, cert, ta, tb, t0)
        v = {k: _finite(x) for k, x in rep.to_json().items()}
        v.update({"t0": t0, "t_end": t_end})
        payloads[0]["pair"] = v
        if args.curves:
            rep.to_csv(args.curves)
    if args.out:
        out = payloads[0] if len(payloads) == 1 else payloads
        Path(args.out).write_text(json.dumps(out, indent=1) + "\n")
    _emit(args, payloads, _render_stability)
    ok = all(p["ok"] for p in payloads)
    if ok and "pair" in payloads[0]:
        ok = payloads[0]["pair"]["holds"]
    return EXIT_OK if ok else EXIT_FAIL


def run_stability(config_path: str, rho: float | None = None, out: str | None = None) -> int:
    argv = ["stability", "--config", str(config_path)]
    argv += ["--rho", str(rho)] if rho is not None else []
    return main(argv + (["--out", str(out)] if out else []))


# -- simulate / picard --------------------------------------------------------------------

def _history(text: str, model: SicnnModel) -> History:
    text = text.strip()
    if text.startswith("["):
        try:
            table = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"history table is not valid JSON: {exc.msg}") from None
        return History.from_exprs(table, model.m, model.n)
    try:
        return History.constant(float(text), model.K)
    except ValueError:
        pass
    try:
        return History.from_exprs(parse(text), model.m, model.n)
    except ExprSyntaxError as exc:
        raise UsageError(f"history expression: {exc}") from None


def _span(args, model: SicnnModel) -> tuple[float, float]:
    t0 = model.ts.start if args.t0 is None else float(args.t0)
    t_end = model.ts.end if args.t_end is None else float(args.t_end)
    if not t_end > t0:
        raise UsageError("--t-end must exceed --t0")
    return t0, t_end


def _zeroed(model: SicnnModel) -> SicnnModel:
    from .sicnn import _replace
    decl = dict(model.declared)
    decl.pop("L_upper", None)
    return _replace(model, L=[[0.0] * model.n for _ in range(model.m)], declared=decl)


def cmd_simulate(args) -> int:
    model, _ = _model(args)
    if args.zero_input:
        model = _zeroed(model)
    t0, t_end = _span(args, model)
    if args.sweep and args.sweep > 1:
        rho = args.rho if args.rho is not None else 1.0
        texts = [repr(float(v)) for v in np.linspace(-rho, rho, args.sweep)]
    else:
        texts = [args.history]
    hists = [_history(s, model) for s in texts]
    trajs = _fan_out(lambda h: simulate(model, h, t0, t_end), hists)
    names = model.cell_names()
    payloads = []
    for k, (text, tr) in enumerate(zip(texts, trajs)):
        path = None
        if args.out:
            path = args.out if len(texts) == 1 else _indexed(args.out, k)
            tr.to_csv(path, names)
        payloads.append({"history": text, "t0": t0, "t_end": t_end, "nodes": len(tr.t),
                         "sup_norm": tr.sup_norm, "final": tr.x[-1].tolist(), "csv": path})
    if not args.out and not args.json:
        _csv_stdout(trajs[0], names)
        return EXIT_OK
    _emit(args, payloads, lambda p: [f"history {p['history']}: {p['nodes']} nodes on "
                                     f"[{_f(p['t0'])}, {_f(p['t_end'])}], sup norm {_f(p['sup_norm'])}"
                                     + (f", written to {p['csv']}" if p["csv"] else "")])
    return EXIT_OK


def _csv_stdout(tr, names) -> None:
    out = sys.stdout
    out.write(",".join(["t", *names]) + "\n")
    for t, row in zip(tr.t, tr.x):
        out.write(",".join([repr(float(t)), *(repr(float(v)) for v in row)]) + "\n")


def _indexed(path: str, k: int) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{k}{p.suffix}"))


def run_simulate(config_path: str, history_spec: str, t0: float, t_end: float, out_csv: str) -> int:
    return main(["simulate", "--config", str(config_path), "--history", history_spec,
                 "--t0", repr(float(t0)), "--t-end", repr(float(t_end)), "--out", str(out_csv)])


def cmd_picard(args) -> int:
    model, data = _model(args)
    rho = _rho(args, data)
    try:
        sol = solve_fixed_point(model, rho, tol=args.tol, max_iter=args.max_iter)
    except (HypothesisError, NonContractionError) as exc:
        _emit(args, [{"rho": rho, "ok": False, "error": str(exc)}],
              lambda p: [f"no fixed point: {p['error']}"])
        return EXIT_FAIL
    if args.out:
        sol.to_csv(args.out, model.cell_names())
    meta = sol.meta
    p = {"rho": rho, "ok": bool(meta["converged"]), "iterations": meta["iterations"],
         "residual": meta["residual"], "ratio": meta["ratio"], "sup_norm": sol.sup_norm,
         "burn_in": meta["margin"], "csv": args.out}
    _emit(args, [p], lambda p: [
        f"Picard iteration: {p['iterations']} iterations, {'converged' if p['ok'] else 'NOT converged'}",
        f"residual |Tx - x| = {_f(p['residual'])}", f"last update ratio = {_f(p['ratio'])}",
        f"sup norm = {_f(p['sup_norm'])} (burn-in {_f(p['burn_in'])} excluded from ratios)"])
    return EXIT_OK if p["ok"] else EXIT_FAIL


# -- automorphy-test / ts ------------------------------------------------------------------

def _scale_from_args(args):
    params = {k: getattr(args, k) for k in ("h", "a", "b") if getattr(args, k, None) is not None}
    lo, hi = args.window
    return make_timescale(args.generator, lo, hi, **params)


def cmd_automorphy(args) -> int:
    if args.config:
        model, _ = _model(args)
        ts = model.ts
    else:
        ts = _scale_from_args(args)
    try:
        f = parse(args.expr)
    except ExprSyntaxError as exc:
        raise UsageError(f"expression: {exc}") from None
    if args.search:
        search = tuple(args.search)
    elif ts.period is not None:
        search = (ts.period, max(3000.0, 10 * ts.period))
    else:
        search = (1.0, 2e5)
    step = args.step if args.step else (ts.period or 0.05)
    core = ts.with_window(ts.start, ts.start + min(ts.end - ts.start, args.core))
    if f.is_constant:
        pool = list(np.arange(1, 9) * (ts.period or 1.0))
    else:
        pool = near_returns(f, ts, search, step, args.epsilon / 4, max_count=args.pool).taus
    if len(pool) < 2:
        p = {"expr": str(f), "epsilon": args.epsilon, "passed": False, "pool": len(pool),
             "forward": "inf", "backward": "inf", "reason": "fewer than 2 near-return translations"}
    else:
        v = test_almost_automorphic(f, pool, core, args.epsilon)
        p = {"expr": str(f), "epsilon": args.epsilon, "passed": v.passed, "pool": len(pool),
             "forward": _finite(v.max_forward_residual), "backward": _finite(v.max_backward_residual),
             "reason": v.reason, "subsequence": [float(s) for s in v.subsequence]}
    _emit(args, [p], lambda p: [
        f"{p['expr']}: {'PASS' if p['passed'] else 'FAIL'} at epsilon {_f(p['epsilon'])}",
        f"candidates {p['pool']}, forward residual {_f(p['forward'])}, backward {_f(p['backward'])}"]
        + ([f"reason: {p['reason']}"] if p.get("reason") else []))
    return EXIT_OK if p["passed"] else EXIT_FAIL


def cmd_ts(args) -> int:
    ts = _scale_from_args(args)
    p = {"generator": ts.generator.value, "window": list(ts.window),
         "intervals": ts.intervals.tolist()[: args.limit], "components": len(ts.intervals),
         "sup_graininess": ts.sup_graininess, "period": ts.period, "points": []}
    for t in args.at or []:
        if not ts.contains(t):
            p["points"].append({"t": t, "member": False})
            continue
        p["points"].append({"t": t, "member": True, "sigma": ts.sigma(t), "rho": ts.rho(t),
                            "mu": ts.graininess(t), "class": ts.classify(t).name.lower()})

    def render(p):
        lines = [f"{p['generator']} on [{_f(p['window'][0])}, {_f(p['window'][1])}]: "
                 f"{p['components']} components, sup mu = {_f(p['sup_graininess'])}"]
        lines += [f"  [{_f(a)}, {_f(b)}]" for a, b in p["intervals"]]
        if p["components"] > len(p["intervals"]):
            lines.append("  ...")
        for q in p["points"]:
            if not q["member"]:
                lines.append(f"t = {_f(q['t'])}: not in the time scale")
            else:
                lines.append(f"t = {_f(q['t'])}: sigma {_f(q['sigma'])}, rho {_f(q['rho'])}, "
                             f"mu {_f(q['mu'])}, {q['class']}")
        return lines

    _emit(args, [p], render)
    return EXIT_OK


# -- verify-paper ------------------------------------------------------------------------

DELTA_NOTE = ("note: delay bounds use the supremum of each delay expression (negative parts "
              "clipped to zero); coupling depends on the source cell only")


def verify_payload(example_id: int) -> dict:
    start = time.perf_counter()
    model, data = load_model(example_path(example_id))
    ref = data["reference"]
    tol = float(ref.get("tolerance", 0.05))
    rho = float(data.get("rho", 1.0))
    rep = check_hypotheses(model, rho)
    rows = []

    def row(name, expected, computed, tolerance):
        diff = abs(computed - expected)
        rows.append({"quantity": name, "reference": expected, "computed": computed, "diff": diff,
                     "tolerance": tolerance, "ok": bool(diff <= tolerance)})

    row("max L/a", ref["max_L_over_a"], rep.max_L_over_a, 1e-12)
    row("H3 value 1", ref["h3_value_1"], rep.h3_value_1, tol)
    row("H3 value 2", ref["h3_value_2"], rep.h3_value_2, tol)
    ratio = float(np.max(contraction_ratios(model, rho, pairs=20, op=PicardOperator(model))))
    rows.append({"quantity": "contraction ratio", "reference": ref["h3_value_2"], "computed": ratio,
                 "diff": max(0.0, ratio - ref["h3_value_2"]), "tolerance": tol, "one_sided": True,
                 "ok": bool(ratio <= ref["h3_value_2"] + tol)})
    try:
        cert = decay_rate(model, rho)
        stab = {"lambda": cert.lam, "M": _finite(cert.big_m), "min_xi": float(np.min(cert.xi)),
                "ok": bool(cert.lam > 0 and cert.big_m > 1 and 1 - cert.lam * cert.sup_mu > 0)}
    except HypothesisError as exc:
        stab = {"ok": False, "error": str(exc)}
    verdict = rep.h3_ok and all(r["ok"] for r in rows) and stab["ok"]
    return {"example": example_id, "name": data.get("name", ""), "rho": rho, "rows": rows,
            "h3_ok": rep.h3_ok, "per_cell": rep.per_cell_table, "stability": stab,
            "verdict": bool(verdict), "seconds": time.perf_counter() - start, "note": DELTA_NOTE}


def _render_verify(p: dict) -> list[str]:
    lines = [f"example {p['example']} ({p['name']}), rho = {_f(p['rho'])}",
             f"{'quantity':<18} {'reference':<10} {'computed':<22} {'|diff|':<24} verdict"]
    for r in p["rows"]:
        lines.append(f"{r['quantity'] + ':':<18} {_f(r['reference']):<10} {_f(r['computed']):<22} "
                     f"{_f(r['diff']):<24} {'ok' if r['ok'] else 'MISMATCH'} "
                     f"({'at most reference + ' if r.get('one_sided') else 'tol '}{_f(r['tolerance'])})")
    lines.append("per-cell quotients:")
    for c in p["per_cell"]:
        i, j = c["cell"]
        lines.append(f"  ({i},{j}) Q1 {_f(c['q1'])}  Q2 {_f(c['q2'])}  L/a {_f(c['L_over_a'])}")
    s = p["stability"]
    if s["ok"]:
        lines.append(f"decay rate lambda = {_f(s['lambda'])}, M = {_f(s['M'])}, min xi = {_f(s['min_xi'])}")
    else:
        lines.append(f"stability certificate: FAIL {s.get('error', '')}")
    lines.append(f"H3 at rho: {'PASS' if p['h3_ok'] else 'FAIL'}")
    lines.append(p["note"])
    lines.append(f"overall: {'PASS' if p['verdict'] else 'FAIL'}")
    return lines


def cmd_verify(args) -> int:
    ex = args.example if args.example is not None else args.example_opt
    if ex not in (1, 2):
        raise UsageError("choose example 1 or 2")
    p = verify_payload(ex)
    _emit(args, [p], _render_verify)
    return EXIT_OK if p["verdict"] else EXIT_FAIL


def run_verify_paper(example_id: int, json_out: bool = False) -> int:
    return main(["verify-paper", str(example_id)] + (["--json"] if json_out else []))


# -- plumbing --------------------------------------------------------------------------------

def _emit(args, payloads: list[dict], render) -> None:
    if args.json:
        out = payloads[0] if len(payloads) == 1 else payloads
        print(json.dumps(out, indent=1))
        return
    for k, p in enumerate(payloads):
        if k:
            print()
        print("\n".join(render(p)))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tslab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"tslab 0.1.0 ({_accel.BACKEND})")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="model configuration JSON")
            p.add_argument("--rho", type=float, help="ball radius (default: config value or 1)")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    def span(p):
        p.add_argument("--t0", type=float)
        p.add_argument("--t-end", dest="t_end", type=float)

    def sweep(p, what):
        p.add_argument("--sweep", type=int, metavar="K", help=what)

    p = common(sub.add_parser("check", help="check the hypotheses"))
    sweep(p, "K radii spaced geometrically over [rho/10, 10 rho]")
    p.set_defaults(fn=cmd_check)

    p = common(sub.add_parser("stability", help="exponential-stability certificate"))
    p.add_argument("--out", help="write the certificate JSON here")
    p.add_argument("--pair", nargs=2, metavar=("HIST_A", "HIST_B"),
                   help="also simulate two histories and verify the exponential bound")
    p.add_argument("--curves", help="CSV of the gap d(t) and its bound (with --pair)")
    span(p)
    sweep(p, "K radii spaced geometrically over [rho/10, 10 rho]")
    p.set_defaults(fn=cmd_stability)

    p = common(sub.add_parser("simulate", help="simulate from an initial history"))
    p.add_argument("--history", default="0",
                   help="constant, expression of t, or JSON m x n table (default 0)")
    p.add_argument("--zero-input", action="store_true", help="set every L_ij to zero")
    p.add_argument("--out", help="trajectory CSV (stdout when omitted)")
    span(p)
    sweep(p, "K constant histories evenly spaced over [-rho, rho]")
    p.set_defaults(fn=cmd_simulate)

    p = common(sub.add_parser("picard", help="Picard iteration for the bounded solution"))
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out", help="solution CSV")
    p.set_defaults(fn=cmd_picard)

    def scale_opts(p):
        p.add_argument("--generator", default="reals", help="reals|integers|step|periodic_union")
        p.add_argument("--window", nargs=2, type=float, default=[0.0, 100.0], metavar=("LO", "HI"))
        p.add_argument("--h", type=float)
        p.add_argument("--a", type=float)
        p.add_argument("--b", type=float)

    p = common(sub.add_parser("automorphy-test", help="almost-automorphy evidence for an expression"))
    p.add_argument("--expr", required=True)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--search", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--step", type=float)
    p.add_argument("--pool", type=int, default=12, help="candidate translations to collect")
    p.add_argument("--core", type=float, default=60.0, help="length of the test core")
    scale_opts(p)
    p.set_defaults(fn=cmd_automorphy)

    p = common(sub.add_parser("verify-paper", help="recompute the bundled examples' constants"),
               config=False)
    p.add_argument("example", nargs="?", type=int, choices=[1, 2])
    p.add_argument("--example", dest="example_opt", type=int, choices=[1, 2])
    p.set_defaults(fn=cmd_verify)

    p = common(sub.add_parser("ts", help="describe a time scale"), config=False)
    scale_opts(p)
    p.add_argument("--at", nargs="*", type=float, help="report jump operators at these points")
    p.add_argument("--limit", type=int, default=20, help="components to list")
    p.set_defaults(fn=cmd_ts)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, TimeScaleError, ExprSyntaxError) as exc:
        print(f"tslab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DelayError, HypothesisError) as exc:
        print(f"tslab: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
