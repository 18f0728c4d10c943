import json
import math
import warnings

import numpy as np
import pytest

from tslab.sicnn import Activation, History, HypothesisError, SicnnModel, check_hypotheses, simulate
from tslab.stability import (StabilityCertificate, decay_rate, s_function, verify_exponential_bound,
                             w_function)
from tslab.timescale import make_timescale

F = Activation.from_text("0.05*sin(x)", 0.05, 0.05)


def scalar(B=0.2, tau=0.0, a=1.0, C=0.0, delta=0.0, ts=None):
    ts = ts or make_timescale("reals", 0, 20)
    w = lambda v: [[v]]
    return SicnnModel(1, 1, 1, 1, w(a), w(B), w(C), w(0.0), w(tau), w(delta), F, F, ts)


def test_w_function_examples(ex2):
    m = scalar()
    for om in (0.0, 0.7, 3.0):
        assert w_function(m, 1.0, om, 1, 1) == pytest.approx(0.02, abs=1e-15)
    assert w_function(scalar(tau=1.0), 1.0, 1.0, 1, 1) == pytest.approx(0.01 + 0.01 * math.e, abs=1e-12)
    q2 = check_hypotheses(ex2, 1.0, spot_checks=False).per_cell_table
    for row in q2:
        i, j = row["cell"]
        a = ex2.bounds().a_lower[i - 1, j - 1]
        assert w_function(ex2, 1.0, 0.0, i, j) == pytest.approx(row["q2"] * a, rel=1e-12)


def test_s_function_examples(ex2):
    # W = 0.5 with no delays: B = 5, M + L = 0.1
    m = scalar(B=5.0)
    for om in (0.0, 0.2, 0.4):
        assert s_function(m, 1.0, om, 1, 1) == pytest.approx(0.5 - om, abs=1e-14)
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            assert s_function(ex2, 1.0, 0.0, i, j) > 0
            assert s_function(ex2, 1.0, 50.0, i, j) < 0


def test_decay_rate_closed_form():
    cert = decay_rate(scalar(B=5.0), 1.0)
    assert cert.xi[0, 0] == pytest.approx(0.5, abs=1e-9)
    assert cert.lam == pytest.approx(0.45, abs=1e-9)
    assert cert.big_m == pytest.approx(2.0)


def test_decay_rate_decoupled():
    with pytest.warns(RuntimeWarning):
        cert = decay_rate(scalar(B=0.0), 1.0)
    assert cert.xi[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert cert.lam == pytest.approx(0.9, abs=1e-9) and math.isinf(cert.big_m)
    assert StabilityCertificate.from_json(json.loads(json.dumps(cert.to_json()))).big_m == math.inf


def test_certificate_invariants(ex2):
    cert = decay_rate(ex2, 1.0)
    a = ex2.bounds().a_lower
    assert 0 < cert.lam < a.min() and cert.lam < cert.xi.min()
    assert 1 - cert.lam * cert.sup_mu > 0 and cert.sup_mu == 1
    assert np.all(cert.per_cell_S_at_lambda > 0) and cert.big_m > 1
    for i in range(3):
        for j in range(3):
            xi = cert.xi[i, j]
            assert abs(s_function(ex2, 1.0, xi, i + 1, j + 1)) <= 1e-8
            probes = np.linspace(0, xi - 1e-6, 100)
            assert all(s_function(ex2, 1.0, w, i + 1, j + 1) > 0 for w in probes)
    # regression baselines for the bundled example
    assert cert.lam == pytest.approx(0.068688, abs=1e-6)
    assert cert.big_m == pytest.approx(28.57, abs=0.01)


def test_monotone_in_coupling(ex2):
    base = decay_rate(ex2, 1.0).xi.min()
    try:
        stronger = decay_rate(ex2.scaled(B=10.0), 1.0).xi.min()
    except HypothesisError:
        return
    assert stronger <= base


def test_h3_failure_raises(ex2):
    with pytest.raises(HypothesisError):
        decay_rate(ex2.scaled(L=100.0), 1.0)


def test_certificate_json_round_trip(ex2):
    cert = decay_rate(ex2, 1.0)
    back = StabilityCertificate.from_json(json.loads(json.dumps(cert.to_json())))
    assert back.lam == cert.lam and back.big_m == cert.big_m and np.array_equal(back.xi, cert.xi)


@pytest.fixture(scope="module")
def pair(ex2):
    a = simulate(ex2, History.constant(0.2, 9), 0, 200)
    b = simulate(ex2, History.constant(-0.2, 9), 0, 200)
    return a, b


def test_bound_holds_for_pair(ex2, pair):
    cert = decay_rate(ex2, 1.0)
    rep = verify_exponential_bound(ex2, cert, *pair, 0.0)
    assert rep.holds and rep.witness is None and rep.d0 == pytest.approx(0.4)
    assert rep.slope_ok and rep.slope <= math.log(1 - cert.lam) + 0.05


def test_identical_histories(ex2, pair):
    rep = verify_exponential_bound(ex2, decay_rate(ex2, 1.0), pair[0], pair[0], 0.0)
    assert rep.holds and np.all(rep.d == 0)


def test_tampered_certificate_fails(ex2, pair):
    cert = decay_rate(ex2, 1.0)
    cert.lam *= 10
    rep = verify_exponential_bound(ex2, cert, *pair, 0.0)
    assert not rep.holds and rep.witness is not None and rep.witness > 0


def test_bound_csv(tmp_path, ex2, pair):
    rep = verify_exponential_bound(ex2, decay_rate(ex2, 1.0), *pair, 0.0)
    p = tmp_path / "curves.csv"
    rep.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,d,bound" and len(lines) == len(rep.t) + 1


def test_mismatched_windows(ex2, pair):
    short = simulate(ex2, History.constant(0.1, 9), 0, 100)
    with pytest.raises(ValueError):
        verify_exponential_bound(ex2, decay_rate(ex2, 1.0), pair[0], short, 0.0)
