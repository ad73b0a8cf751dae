import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from rgcf.graph import BipartiteGraph

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_graph(rng, n_users, n_items, density=0.3, min_degree=1):
    """Random graph where every user has at least ``min_degree`` edges."""
    A = rng.random((n_users, n_items)) < density
    for m in range(n_users):
        short = min_degree - A[m].sum()
        if short > 0:
            A[m, rng.choice(np.flatnonzero(~A[m]), size=short, replace=False)] = True
    users, items = np.nonzero(A)
    return BipartiteGraph.from_edges(users, items, n_users, n_items)


@st.composite
def graphs(draw, max_users=50, max_items=50):
    n_users = draw(st.integers(1, max_users))
    n_items = draw(st.integers(1, max_items))
    pairs = draw(st.lists(st.tuples(st.integers(0, n_users - 1), st.integers(0, n_items - 1)), max_size=200))
    users = [p[0] for p in pairs]
    items = [p[1] for p in pairs]
    return BipartiteGraph.from_edges(users, items, n_users, n_items)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    # acceptance lines are printed inside captured tests; repeat them where they stay visible
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
