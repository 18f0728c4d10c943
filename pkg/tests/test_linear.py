import json
import math

import numpy as np
import pytest

from tslab.calculus import RegressivityError
from tslab.config import example_path
from tslab.linear import (DichotomyData, DichotomyError, HorizonError, LinearSystem, bounded_solution,
                          check_dichotomy, diagonal_dichotomy, diagonal_system, fundamental_matrix,
                          lemma41_preconditions, residuals)
from tslab.timescale import make_timescale

Z = make_timescale("integers", 0, 80)
R = make_timescale("reals", 0, 30)


def _decay_table(example_id):
    data = json.loads(example_path(example_id).read_text())
    ts = make_timescale(data["time_scale"]["generator"], *data["time_scale"]["window"])
    return [c for row in data["coefficients"]["a"] for c in row], ts


def test_fundamental_examples():
    X = fundamental_matrix(LinearSystem([[-0.5]], [0], Z), 0)
    assert np.allclose(X.values[:, 0, 0], 0.5 ** X.t, rtol=1e-14)
    X = fundamental_matrix(LinearSystem([[0, 0], [0, 0]], [0, 0], R), 3.0)
    assert np.all(X.values == np.eye(2))
    X = fundamental_matrix(LinearSystem([[2.0]], [0], make_timescale("reals", 0, 1)), 0)
    assert X(1.0)[0, 0] == pytest.approx(math.e ** 2, abs=1e-6)


def test_fundamental_backward_and_recursion():
    ts = make_timescale("periodic_union", 0, 12, a=1, b=0.5)
    A = [["-1-0.2*sin(t)", "0.1"], ["0.05", "-0.5"]]
    sys = LinearSystem(A, [0, 0], ts)
    X = fundamental_matrix(sys, 6.0)
    assert np.allclose(X(6.0), np.eye(2))
    for t in (1.0, 2.5, 7.0, 11.5):
        s = ts.sigma(t)
        step = np.eye(2) + (s - t) * sys.A_at(t)[0]
        assert np.allclose(X(s), step @ X(t), atol=1e-13, rtol=1e-12)


def test_singular_system_rejected():
    with pytest.raises(RegressivityError):
        LinearSystem([[-1.0]], [0], Z)


def test_check_dichotomy_cases():
    sys = LinearSystem([[-0.5]], [0], Z)
    assert check_dichotomy(sys, DichotomyData([[1.0]], 1.0, 0.5)).holds
    bad = check_dichotomy(sys, DichotomyData([[1.0]], 1.0, 1.5))
    assert not bad.holds and bad.witness_forward is not None
    t, s = bad.witness_forward
    assert t > s
    ident = LinearSystem([[0.0]], [0], R)
    assert not check_dichotomy(ident, DichotomyData([[1.0]], 2.0, 0.3)).holds


def test_projection_validation():
    with pytest.raises(DichotomyError):
        DichotomyData([[0.5]], 1.0, 1.0)
    with pytest.raises(DichotomyError):
        DichotomyData([[1.0]], 1.0, 0.0)


def test_diagonal_dichotomy():
    d = diagonal_dichotomy([1.0], R)
    assert (d.P.tolist(), d.k, d.alpha) == ([[1.0]], 1.0, 1.0)
    assert check_dichotomy(diagonal_system([1.0], R), d).holds
    d = diagonal_dichotomy([0.5], Z)
    assert d.alpha == 0.5 and check_dichotomy(diagonal_system([0.5], Z), d).holds
    with pytest.raises(DichotomyError):
        diagonal_dichotomy(["abs(sin(t))"], R)
    with pytest.raises(RegressivityError):
        diagonal_dichotomy([1.5], Z)


@pytest.mark.parametrize("example_id", [1, 2])
def test_diagonal_dichotomy_on_example_decays(example_id):
    c, ts = _decay_table(example_id)
    d = diagonal_dichotomy(c, ts)
    rep = check_dichotomy(diagonal_system(c, ts), d, sample_pairs=1000)
    assert rep.holds and rep.worst_margin_forward >= 0 and rep.worst_margin_backward >= 0


def test_preconditions():
    rep = lemma41_preconditions(LinearSystem([[-1.0]], [0], R))
    assert rep.max_inv_A == pytest.approx(1) and rep.max_inv_I_mu_A == pytest.approx(1) and rep.bounded
    rep = lemma41_preconditions(LinearSystem([["-(3+abs(sin(t)))"]], [0], make_timescale("reals", 0, 50)))
    assert rep.max_inv_A == pytest.approx(1 / 3, abs=1e-6)
    rep = lemma41_preconditions(LinearSystem([[-1.0]], [0], Z, validate=False))
    assert not rep.bounded and rep.I_mu_A_singular_at


def test_bounded_solution_examples():
    x = bounded_solution(diagonal_system([0.5], Z, [1.0]), diagonal_dichotomy([0.5], Z), tol=1e-6)
    assert np.max(np.abs(x.values - 2)) <= 1e-6 + x.meta["tail_bound"]
    x = bounded_solution(diagonal_system([1.0], R, [1.0]), diagonal_dichotomy([1.0], R), tol=1e-6)
    assert np.max(np.abs(x.values - 1)) <= 1e-6
    x = bounded_solution(diagonal_system([1.0], R, [0.0]), diagonal_dichotomy([1.0], R))
    assert np.all(x.values == 0)


def test_bounded_solution_residual_law():
    ts = make_timescale("periodic_union", 0, 40, a=1, b=0.5)
    c = ["1+0.3*sin(t)", "0.8"]
    sys = diagonal_system(c, ts, ["cos(t)", "1"])
    x = bounded_solution(sys, diagonal_dichotomy(c, ts), tol=1e-6)
    scattered, dense = residuals(sys, x)
    assert scattered <= 1e-6 and dense <= 1e-4


def test_bounded_solution_convolution_and_linearity():
    f = "1+0.5*cos(t)"
    sys = diagonal_system([0.4], Z, [f])
    d = diagonal_dichotomy([0.4], Z)
    x = bounded_solution(sys, d, tol=1e-8)
    fv = 1 + 0.5 * np.cos(np.arange(0, 81))
    for t in x.t[::5]:
        s = np.arange(0, int(t))
        closed = np.sum(0.6 ** (t - 1 - s) * fv[s])
        assert x(t)[0] == pytest.approx(closed, abs=1e-8)
    x1 = bounded_solution(diagonal_system([0.4], Z, ["sin(t)"]), d, tol=1e-8)
    x2 = bounded_solution(diagonal_system([0.4], Z, ["2"]), d, tol=1e-8)
    x12 = bounded_solution(diagonal_system([0.4], Z, ["sin(t)+2"]), d, tol=1e-8)
    # certified node sets depend on sup|f|; compare where all three are certified
    common = np.intersect1d(np.intersect1d(x1.t, x2.t), x12.t)
    assert len(common) > 10
    gap = x12.at_many(common) - x1.at_many(common) - x2.at_many(common)
    assert np.max(np.abs(gap)) <= 2e-8


def test_horizon_error():
    short = make_timescale("integers", 0, 10)
    with pytest.raises(HorizonError) as err:
        bounded_solution(diagonal_system([0.1], short, [1.0]), diagonal_dichotomy([0.1], short), tol=1e-9)
    assert err.value.required > 10
