import numpy as np
import pytest

from hjgraph import harness
from hjgraph import eps_solver as es


@pytest.fixture(scope="session")
def h3_graph():
    return harness.build_graph(harness.H3_FIXTURE)


@pytest.fixture(scope="session")
def h3_pipeline():
    return harness.build_pipeline(harness.H3_FIXTURE)


@pytest.fixture(scope="session")
def small_grid(h3_graph):
    f, graph = h3_graph
    return es.make_grid(f, graph, 65)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(RESULTS, key=lambda c: int(c[1:])):
        terminalreporter.write_line(RESULTS[cid].line())
