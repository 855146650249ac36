import math

import pytest
from hypothesis import strategies as st

from periodic_execution.model import DEFAULT_PARAMS, ModelParams, derive_constants


@pytest.fixture(scope="session")
def params():
    return DEFAULT_PARAMS


@pytest.fixture(scope="session")
def consts():
    return derive_constants(DEFAULT_PARAMS)


def _log_uniform(lo, hi):
    return st.floats(math.log(lo), math.log(hi)).map(math.exp)


@st.composite
def valid_params(draw):
    """Draws from the property-test domain of the model parameters."""
    delta = draw(st.floats(0.01, 0.5))
    mu = draw(st.floats(0.0, 1.0, exclude_min=True, exclude_max=True)) * delta
    return ModelParams(
        mu=mu,
        sigma=draw(st.floats(0.05, 1.0)),
        delta=delta,
        lam=draw(_log_uniform(1e-4, 1.0)),
        gamma=draw(_log_uniform(1e-3, 1e3)),
        cost_sell=draw(_log_uniform(0.01, 10.0)),
        cost_buy=0.5,
    )


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key].line())
