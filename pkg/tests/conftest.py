import math

import numpy as np
import pytest
from hypothesis import strategies as st

from riskstop import FiniteChain

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        ok = report.outcome == "passed"
        _criteria[marker] = _criteria.get(marker, True) and ok


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _criteria[n] else 'FAIL'}")


@st.composite
def finite_chains(draw, n_states=(2, 5), max_atoms=3):
    """Random chains with positive running cost and non-negative terminal cost."""
    n = draw(st.integers(*n_states))
    states = [float(i) for i in range(n)]
    rows = {}
    for x in states:
        k = draw(st.integers(1, min(max_atoms, n)))
        targets = draw(st.lists(st.sampled_from(states), min_size=k, max_size=k, unique=True))
        weights = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
        total = math.fsum(weights)
        rows[x] = [(y, w / total) for y, w in zip(targets, weights)]
    running = {x: draw(st.floats(0.05, 1.5)) for x in states}
    terminal = {x: draw(st.floats(0.0, 6.0)) for x in states}
    return FiniteChain(rows, running=running, terminal=terminal)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
