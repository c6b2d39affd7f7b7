import networkx as nx
import pytest

from CommunityMembershipHiding.utils.graph_core import Graph


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def karate() -> Graph:
    g = nx.karate_club_graph()
    return Graph(g.nodes(), g.edges())


@pytest.fixture
def two_cliques() -> Graph:
    """two 5-cliques {0..4} and {5..9} joined by the single edge (4, 5)"""
    edges = [(u, v) for block in (range(5), range(5, 10)) for u in block for v in block if u < v]
    return Graph(range(10), edges + [(4, 5)])


@pytest.fixture
def star() -> Graph:
    """K_{1,4} with centre 0"""
    return Graph(range(5), [(0, i) for i in range(1, 5)])


@pytest.fixture
def scripted(monkeypatch):
    """replace the detector inside the environment by a fixed sequence of covers

    a single cover is repeated for every call
    """
    from itertools import chain, repeat

    from CommunityMembershipHiding.tools import env

    def install(*covers):
        sequence = chain(covers, repeat(covers[-1])) if len(covers) == 1 else iter(covers)
        monkeypatch.setattr(env, "detect", lambda g, cfg: next(sequence))

    return install
