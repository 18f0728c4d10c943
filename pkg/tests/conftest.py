import numpy as np
import pytest

from tslab.config import load_example
from tslab.timescale import make_timescale


@pytest.fixture(scope="session")
def ex1():
    return load_example(1)[0]


@pytest.fixture(scope="session")
def ex2():
    return load_example(2)[0]


@pytest.fixture(params=["reals", "integers", "step", "periodic_union"])
def any_scale(request):
    kw = {"step": {"h": 0.5}, "periodic_union": {"a": 1.0, "b": 1.0}}.get(request.param, {})
    return make_timescale(request.param, 0, 40, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
