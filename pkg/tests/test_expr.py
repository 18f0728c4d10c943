import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tslab._kernels import run_code
from tslab.expr import (DECLARED, ExprEvalError, ExprSyntaxError, bound_estimate, constant,
                        evaluate, parse)
from tslab.timescale import make_timescale


@pytest.mark.parametrize("text, t, want", [
    ("3+abs(sin(t))", 0.0, 3.0),
    ("0.5+0.5*sin(t)", math.pi / 2, 1.0),
    ("2+abs(cos(t))", 0.0, 3.0),
    ("0.1*sin(2*t)", 0.0, 0.0),
    ("-t*2 - -3", 1.0, 1.0),
    ("max(1, t) * min(2, t)", 3.0, 6.0),
    ("1.5e-1 + .5", 0.0, 0.65),
    ("sqrt(exp(2*t))", 1.0, math.e),
])
def test_eval(text, t, want):
    assert evaluate(parse(text), t) == pytest.approx(want, abs=1e-15)


def test_precedence():
    assert parse("1-2-3").eval(0) == -4
    assert parse("8/4/2").eval(0) == 1
    assert parse("2+3*4").eval(0) == 14


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as err:
        parse("sin(")
    assert err.value.offset == 4
    with pytest.raises(ExprSyntaxError):
        parse("foo(t)")
    with pytest.raises(ExprSyntaxError):
        parse("2 t")


def test_division_by_zero():
    with pytest.raises(ExprEvalError):
        parse("1/t").eval(0.0)
    with pytest.raises(ExprEvalError):
        parse("1/t").eval_many(np.array([1.0, 0.0]))


def test_bounds():
    b = bound_estimate(parse("3+abs(sin(t))"), make_timescale("reals", 0, 100), samples=100_000)
    assert abs(b.inf_value - 3) < 1e-3 and abs(b.sup_value - 4) < 1e-3
    c = bound_estimate(constant(5), make_timescale("reals", 0, 1))
    assert (c.inf_value, c.sup_value) == (5, 5)
    z = bound_estimate(parse("cos(t)"), make_timescale("integers", 1, 1000))
    assert z.sup_value < 1
    d = bound_estimate(parse("t"), make_timescale("reals", 0, 1), declared=(0, 7))
    assert d.method == DECLARED and d.sup_value == 7


def test_bounds_monotone_in_window():
    e = parse("sin(t) + 0.3*cos(3*t)")
    small = bound_estimate(e, make_timescale("reals", 0, 10))
    big = bound_estimate(e, make_timescale("reals", 0, 20))
    assert big.inf_value <= small.inf_value + 1e-9
    assert big.sup_value >= small.sup_value - 1e-9


_leaf = st.one_of(st.just("t"), st.floats(0, 50, allow_nan=False).map(lambda v: repr(round(v, 3))))


def _combine(children):
    bin_ = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda x: f"({x[0]} {x[1]} {x[2]})")
    fn = st.tuples(st.sampled_from(["sin", "cos", "abs", "exp"]), children).map(
        lambda x: f"{x[0]}({x[1]})")
    mm = st.tuples(st.sampled_from(["min", "max"]), children, children).map(
        lambda x: f"{x[0]}({x[1]}, {x[2]})")
    neg = children.map(lambda c: f"-{c}")
    return st.one_of(bin_, fn, mm, neg)


exprs = st.recursive(_leaf, _combine, max_leaves=8)


@settings(max_examples=50, deadline=None)
@given(exprs)
def test_print_round_trip(text):
    e = parse(text)
    again = parse(str(e))
    assert again.ast == e.ast
    assert str(again) == str(e)


@settings(max_examples=50, deadline=None)
@given(exprs, st.floats(-3, 3))
def test_backends_agree(text, t):
    e = parse(text)
    try:
        want = e.eval(t)
    except (ExprEvalError, OverflowError):
        return
    ops, consts = e.bytecode()
    got = run_code(ops, consts, t)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
    assert e.eval_many(np.array([t]))[0] == pytest.approx(want, rel=1e-12, abs=1e-12)
    assert e.compile()(t) == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_abs_plus_constant_lower_bound():
    for text in ("2+abs(sin(3*t))", "0.7+abs(cos(t)-0.5)"):
        c = float(text.split("+")[0])
        b = bound_estimate(parse(text), make_timescale("periodic_union", 0, 30, a=1, b=0.5))
        assert b.inf_value >= c - 1e-9
