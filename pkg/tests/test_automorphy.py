import math

import numpy as np
import pytest

from tslab import automorphy as aa
from tslab.calculus import GridFunction
from tslab.expr import parse
from tslab.timescale import make_timescale, translation_numbers

EPS = 0.05
# back-translates t - s_n + s_k reach about -max(pool), so the grid extends left too
WIN = make_timescale("reals", -11400, 11400)
CORE = make_timescale("reals", 0, 60)
QP = "sin(t)+sin(sqrt(2)*t)"


@pytest.fixture(scope="module")
def pool():
    return aa.near_returns(parse(QP), WIN, (1, 11300), 0.05, EPS / 4, max_count=10)


def _grid(text, per_unit=32):
    return GridFunction.sample(WIN, parse(text), per_unit=per_unit)


@pytest.fixture(scope="module")
def corpus():
    return {"f": _grid(QP), "g": _grid("cos(t)+0.5*cos(sqrt(2)*t)")}


def test_constant_passes():
    v = aa.test_almost_automorphic(lambda t: np.full(np.shape(t), 3.0), [1.0, 2.5, 7.0, 9.0], CORE, 1e-9)
    assert v.passed and np.allclose(v.limit_function.values, 3.0)


def test_identity_rejected():
    v = aa.test_almost_automorphic(lambda t: np.asarray(t, float), [1.0, 2.0, 3.0, 5.0], CORE, 0.01)
    assert not v.passed
    capped = aa.test_almost_automorphic(lambda t: np.asarray(t, float) * 1e7, [1.0, 2.0], CORE, 0.01)
    assert not capped.passed and "cap" in capped.reason


def test_quasi_periodic_passes_at_001():
    f = parse(QP)
    taus = aa.near_returns(f, make_timescale("reals", 0, 100), (1, 2e5), 0.05, 0.0025, max_count=12)
    v = aa.test_almost_automorphic(f, taus, CORE, 0.01)
    assert v.passed and set(v.subsequence) <= set(taus.taus)
    assert v.max_forward_residual <= 0.01 and v.max_backward_residual <= 0.01


def test_candidate_errors():
    g = GridFunction.sample(make_timescale("reals", 0, 10), np.sin)
    with pytest.raises(aa.CandidateError):
        aa.test_almost_automorphic(g, [50.0, 60.0], make_timescale("reals", 0, 5), 0.1)


def test_deterministic(pool, corpus):
    a = aa.test_almost_automorphic(corpus["f"], pool, CORE, EPS)
    b = aa.test_almost_automorphic(corpus["f"], pool, CORE, EPS)
    assert a.subsequence == b.subsequence and a.max_backward_residual == b.max_backward_residual


def test_pointwise_examples():
    ts = make_timescale("reals", 0, 10)
    one, two = GridFunction.sample(ts, 1.0), GridFunction.sample(ts, 2.0)
    assert np.all(aa.pointwise_combine(one, two, aa.Sum()).values == 3)
    s = GridFunction.sample(ts, np.sin)
    assert np.all(aa.pointwise_combine(s, None, aa.Scale(0.0)).values == 0)
    prod = aa.pointwise_combine(s, GridFunction.sample(ts, np.cos), aa.Product())
    assert np.max(np.abs(prod.values - 0.5 * np.sin(2 * prod.t))) <= 1e-12
    sh = aa.pointwise_combine(s, None, aa.Translate(1.5))
    assert sh.end <= 8.5 + 1e-12 and np.allclose(sh.values, np.sin(sh.t + 1.5), atol=1e-3)


def test_closure_linear(pool, corpus):
    f, g = corpus["f"], corpus["g"]
    vf = aa.test_almost_automorphic(f, pool, CORE, EPS)
    vg = aa.test_almost_automorphic(g, pool, CORE, EPS)
    assert vf.passed and vg.passed
    kept = vf.subsequence
    assert aa.test_almost_automorphic(aa.pointwise_combine(f, g, aa.Sum()), kept, CORE, 2 * EPS).passed
    for alpha in (0.0, -0.7, 2.5):
        scaled = aa.pointwise_combine(f, None, aa.Scale(alpha))
        assert aa.test_almost_automorphic(scaled, kept, CORE, (1 + abs(alpha)) * 2 * EPS + 1e-15).passed
    moved = aa.pointwise_combine(f, None, aa.Translate(2.0))
    assert aa.test_almost_automorphic(moved, kept, CORE, 2 * EPS).passed


def test_closure_product_and_composition(pool, corpus):
    f, g = corpus["f"], corpus["g"]
    k1, k2 = f.sup_norm(), g.sup_norm()
    kept = aa.test_almost_automorphic(f, pool, CORE, EPS).subsequence
    prod = aa.pointwise_combine(f, g, aa.Product())
    assert aa.test_almost_automorphic(prod, kept, CORE, (k1 + k2) * 2 * EPS).passed
    lip = 2.0
    comp = aa.pointwise_combine(f, None, aa.ComposeOuter(lambda u: lip * np.sin(u)))
    assert aa.test_almost_automorphic(comp, kept, CORE, lip * 2 * EPS).passed


def test_uniform_limit(pool):
    def partial(n):
        return " + ".join(f"{2.0 ** -k}*(sin({k}*t)+sin({k}*sqrt(2)*t))" for k in range(1, n + 1))
    for n in (1, 2, 3, 4):
        assert aa.test_almost_automorphic(parse(partial(n)), pool, CORE, 2 * EPS).passed
    limit = parse(partial(30))
    assert aa.test_almost_automorphic(limit, pool, CORE, 3 * 2 * EPS).passed


def test_uniform_in_x(pool):
    f2 = lambda t, x: np.sin(np.asarray(t) + x) + np.sin(math.sqrt(2) * np.asarray(t))
    verdicts = aa.test_uniform_in_x(f2, [-1.0, 0.0, 0.5], pool, CORE, EPS)
    assert all(v.passed for v in verdicts)


@pytest.mark.parametrize("gen, kw, cands", [
    ("integers", {}, [1, 2, 3, 5, 8]),
    ("reals", {}, [0.5, 1.0, 2.0]),
    ("periodic_union", {"a": 1, "b": 1}, [2, 4, 6, 8]),
])
def test_graininess(gen, kw, cands):
    ts = make_timescale(gen, 0, 40, **kw)
    v = aa.graininess_automorphy_test(ts, cands, 1e-12)
    assert v.passed
    if gen == "periodic_union":
        assert v.max_forward_residual == 0 and v.max_backward_residual == 0


def test_graininess_with_translation_numbers():
    ts = make_timescale("periodic_union", 0, 40, a=1, b=1)
    taus = [t for t in translation_numbers(ts, 0.0, (1, 12), 0.5).taus if t > 0]
    assert aa.graininess_automorphy_test(ts, taus, 0.0).passed


def test_near_returns_periodic_scale():
    ts = make_timescale("integers", 0, 100)
    pool = aa.near_returns(parse("cos(t)"), ts, (1, 2000), 1.0, 0.05)
    assert all(float(s).is_integer() for s in pool.taus)
    assert all(abs(math.cos(s) - 1) <= 0.05 for s in pool.taus)


def test_spot_check():
    assert aa.spot_check(parse("3"), make_timescale("reals", 0, 40))["passed"]
    rep = aa.spot_check(parse("2+abs(sin(t))"), make_timescale("reals", 0, 40))
    assert rep["passed"] and rep["pool"] >= 2
    assert not aa.spot_check(parse("t"), make_timescale("integers", 0, 200))["passed"]
