"""Topology validation and the normalized adjacency operator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodgtn.graph import GraphError, build_graph, load_topology, normalized_adjacency, write_topology

from conftest import path_graph


def station(node_id, kind="water-level-station"):
    return {"id": node_id, "kind": kind}


def test_single_node_graph():
    g = build_graph({"nodes": [station("S1")], "edges": [], "targets": ["S1"]})
    assert len(g) == 1
    assert normalized_adjacency(g).values.tolist() == [[1.0]]


def test_default_topology(graph):
    assert graph.targets == ("S1", "S2", "S3", "S5")
    assert len(graph.nodes_of_kind("water-level-station")) == 5
    assert graph.nodes_of_kind("tide-boundary") == ["T0"]
    # three tributaries meet at the junction through their structures
    assert sorted(graph.neighbors("S4")) == ["G1", "G3", "P2", "S5"]
    assert "T0" in graph.neighbors("S5")


@pytest.mark.parametrize("spec, message", [
    ({"nodes": [station("S1"), station("S1")], "targets": ["S1"]}, "duplicate node id"),
    ({"nodes": [station("S1")], "edges": [["S1", "S9"]], "targets": ["S1"]}, "dangling endpoint"),
    ({"nodes": [station("S1"), station("S2")], "edges": [], "targets": ["S1"]}, "disconnected"),
    ({"nodes": [station("S1")], "targets": []}, "empty targets"),
    ({"nodes": [station("S1"), station("R1", "rain-gauge")], "edges": [["S1", "R1"]], "targets": ["R1"]},
     "not a water-level-station"),
    ({"nodes": [station("S1", "weir")], "targets": ["S1"]}, "unknown node kind"),
])
def test_build_graph_rejects(spec, message):
    with pytest.raises(GraphError, match=message):
        build_graph(spec)


def test_edges_are_undirected():
    g = build_graph({"nodes": [station("A"), station("B")], "edges": [["A", "B"], ["B", "A"]], "targets": ["A"]})
    assert g.edges == (("A", "B"),)
    assert normalized_adjacency(g).values[0, 1] == normalized_adjacency(g).values[1, 0]


def test_three_node_path_values():
    a = normalized_adjacency(path_graph(3)).values
    assert a[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert a[0, 1] == pytest.approx(1.0 / np.sqrt(6.0), abs=1e-15)
    assert a[1, 1] == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert a[0, 2] == 0.0


def test_topology_round_trip(tmp_path, graph):
    path = tmp_path / "topo.yaml"
    write_topology(graph, path)
    assert load_topology(path) == graph


@st.composite
def random_graphs(draw, max_nodes=6):
    n = draw(st.integers(1, max_nodes))
    ids = [f"N{i}" for i in range(n)]
    edges = [[ids[i], ids[draw(st.integers(0, i - 1))]] for i in range(1, n)]   # spanning tree
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=6))
    edges += [[ids[a], ids[b]] for a, b in extra if a != b]
    return build_graph({"nodes": [station(i) for i in ids], "edges": edges, "targets": [ids[0]]})


def _brute_force(g):
    n = len(g)
    a = np.eye(n)
    for u, v in g.edges:
        a[g.index(u), g.index(v)] = a[g.index(v), g.index(u)] = 1.0
    deg = a.sum(axis=1)
    return np.array([[a[i, j] / np.sqrt(deg[i] * deg[j]) for j in range(n)] for i in range(n)])


@settings(max_examples=60, deadline=None)
@given(random_graphs())
def test_adjacency_invariants(g):
    adj = normalized_adjacency(g)
    a = adj.values
    assert adj.ordering == g.node_ids
    assert np.allclose(a, _brute_force(g), atol=1e-15)
    assert np.abs(a - a.T).max() <= 1e-12
    assert np.all(np.diag(a) > 0)
    assert np.all((a >= 0) & (a <= 1))
    # power iteration for the spectral radius
    v = np.ones(len(g))
    for _ in range(200):
        v = a @ v
        v /= np.linalg.norm(v)
    assert np.linalg.norm(a @ v) <= 1 + 1e-9


@settings(max_examples=40, deadline=None)
@given(random_graphs(), st.randoms(use_true_random=False))
def test_adjacency_permutation_equivariance(g, random):
    order = list(g.node_ids)
    random.shuffle(order)
    permuted = g.reordered(order)
    p = np.zeros((len(g), len(g)))
    for new, node_id in enumerate(order):
        p[new, g.index(node_id)] = 1.0
    expected = p @ normalized_adjacency(g).values @ p.T
    assert np.allclose(normalized_adjacency(permuted).values, expected, atol=1e-12)


def test_adjacency_is_read_only(graph):
    with pytest.raises(ValueError):
        normalized_adjacency(graph).values[0, 0] = 2.0
