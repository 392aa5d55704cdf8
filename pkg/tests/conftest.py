import numpy as np
import networkx as nx
import pytest

from sdgnn.graph_store import Graph


def graph_from_nx(nxg):
    n = nxg.number_of_nodes()
    edges = np.array(list(nxg.edges()), dtype=np.int64).reshape(-1, 2)
    return Graph.from_edges(n, edges)


def er_graph(n, p, seed):
    return graph_from_nx(nx.erdos_renyi_graph(n, p, seed=seed))


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves):
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def star_plus_path():
    """Hub 0 with eight leaves, and a four-node tail 0-9-10-11-12."""
    edges = [(0, i) for i in range(1, 9)] + [(0, 9), (9, 10), (10, 11), (11, 12)]
    return Graph.from_edges(13, edges)


class CountingRows:
    """Feature matrix double that records every row fetched."""

    def __init__(self, X):
        self.X = np.asarray(X)
        self.fetched = []
        self.calls = 0

    @property
    def shape(self):
        return self.X.shape

    def __getitem__(self, rows):
        self.calls += 1
        self.fetched.extend(np.atleast_1d(rows).tolist())
        return self.X[rows]


@pytest.fixture
def path3():
    return path_graph(3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
