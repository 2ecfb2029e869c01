import os

import numpy as np
import pytest

from catdag.graph import Dag, NodeSpec, from_edges

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def random_dag(rng, n_nodes=None, max_nodes=6, edge_prob=0.5, max_dim=1):
    """Random DAG in a random node order (so it is generally not sorted)."""
    n = n_nodes or int(rng.integers(1, max_nodes + 1))
    order = rng.permutation(n)
    adj = np.zeros((n, n), dtype=np.int8)
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < edge_prob:
                adj[order[a], order[b]] = 1
    dims = rng.integers(1, max_dim + 1, n)
    return Dag([NodeSpec(f"N{i}", int(dims[i])) for i in range(n)], adj)


def brute_ancestors(adj):
    """anc[j, k] = True iff a directed path j -> ... -> k exists (DFS per node)."""
    n = adj.shape[0]
    anc = np.zeros((n, n), dtype=bool)
    for s in range(n):
        stack = [s]
        while stack:
            u = stack.pop()
            for v in range(n):
                if adj[u, v] and not anc[s, v]:
                    anc[s, v] = True
                    stack.append(v)
    return anc


@pytest.fixture
def triangle_dag():
    return from_edges(["X1", "X2", "X3"], [("X1", "X2"), ("X1", "X3"), ("X2", "X3")])


@pytest.fixture
def chain_dag():
    return from_edges(["A", "B", "C"], [("A", "B"), ("B", "C")])


@pytest.fixture
def mediation_dag():
    return from_edges(["D", "L1", "Y", "L2"],
                      [("D", "L1"), ("D", "Y"), ("L1", "Y"), ("D", "L2"), ("Y", "L2")])
