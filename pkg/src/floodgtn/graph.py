"""River topology as a graph, and the normalized adjacency used by GCN layers."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

NODE_KINDS = ("water-level-station", "gate", "pump", "rain-gauge", "tide-boundary")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    channels: tuple[str, ...] = ()


@dataclass(frozen=True)
class StationGraph:
    nodes: tuple[NodeSpec, ...]
    edges: tuple[tuple[str, str], ...]
    targets: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.id: i for i, n in enumerate(self.nodes)})

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def index(self, node_id: str) -> int:
        return self._index[node_id]

    def node(self, node_id: str) -> NodeSpec:
        return self.nodes[self._index[node_id]]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def neighbors(self, node_id: str) -> list[str]:
        out = []
        for a, b in self.edges:
            if a == node_id:
                out.append(b)
            elif b == node_id:
                out.append(a)
        return sorted(out, key=self.index)

    def hops_from(self, node_id: str) -> dict[str, int]:
        """Breadth-first hop distance from ``node_id`` to every node."""
        dist = {node_id: 0}
        queue = deque([node_id])
        while queue:
            cur = queue.popleft()
            for nxt in self.neighbors(cur):
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist

    def nodes_of_kind(self, kind: str) -> list[str]:
        return [n.id for n in self.nodes if n.kind == kind]

    def reordered(self, order) -> "StationGraph":
        """Same graph with nodes listed in ``order`` (a permutation of node ids)."""
        if sorted(order) != sorted(self.node_ids):
            raise GraphError("reorder must be a permutation of the node ids")
        return StationGraph(tuple(self.node(i) for i in order), self.edges, self.targets)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "kind": n.kind, **({"channels": list(n.channels)} if n.channels else {})}
                      for n in self.nodes],
            "edges": [list(e) for e in self.edges],
            "targets": list(self.targets),
        }


@dataclass(frozen=True)
class AdjacencyMatrix:
    values: np.ndarray
    ordering: tuple[str, ...]


def build_graph(spec: dict) -> StationGraph:
    """Validate a topology description (``nodes``, ``edges``, ``targets``)."""
    try:
        raw_nodes = spec["nodes"]
        raw_edges = spec.get("edges") or []
        raw_targets = spec.get("targets") or []
    except (KeyError, TypeError, AttributeError):
        raise GraphError("topology needs a 'nodes' section") from None

    nodes = []
    seen = set()
    for item in raw_nodes:
        node_id, kind = str(item["id"]), item["kind"]
        if kind not in NODE_KINDS:
            raise GraphError(f"unknown node kind {kind!r} for node {node_id!r}")
        if node_id in seen:
            raise GraphError(f"duplicate node id {node_id!r}")
        seen.add(node_id)
        nodes.append(NodeSpec(node_id, kind, tuple(item.get("channels") or ())))
    if not nodes:
        raise GraphError("topology has no nodes")

    edges = []
    undirected = set()
    for pair in raw_edges:
        if len(pair) != 2:
            raise GraphError(f"edge {pair!r} must have exactly two endpoints")
        a, b = str(pair[0]), str(pair[1])
        for end in (a, b):
            if end not in seen:
                raise GraphError(f"dangling endpoint {end!r} in edge ({a}, {b})")
        if a == b:
            raise GraphError(f"self-loop on {a!r}")
        key = frozenset((a, b))
        if key not in undirected:
            undirected.add(key)
            edges.append((a, b))

    targets = tuple(str(t) for t in raw_targets)
    if not targets:
        raise GraphError("empty targets")
    if len(set(targets)) != len(targets):
        raise GraphError("duplicate target ids")
    kinds = {n.id: n.kind for n in nodes}
    for t in targets:
        if kinds.get(t) != "water-level-station":
            raise GraphError(f"target {t!r} is not a water-level-station node")

    graph = StationGraph(tuple(nodes), tuple(edges), targets)
    if len(graph.hops_from(nodes[0].id)) != len(nodes):
        raise GraphError("disconnected graph")
    return graph


def load_topology(path) -> StationGraph:
    with open(path) as fh:
        return build_graph(yaml.safe_load(fh))


def default_topology() -> StationGraph:
    text = resources.files("floodgtn.resources").joinpath("default_topology.yaml").read_text()
    return build_graph(yaml.safe_load(text))


def write_topology(graph: StationGraph, path) -> None:
    Path(path).write_text(yaml.safe_dump(graph.to_dict(), sort_keys=False, default_flow_style=None))


def normalized_adjacency(graph: StationGraph) -> AdjacencyMatrix:
    """Symmetric renormalization ``D^-1/2 (A + I) D^-1/2`` with D the degrees of ``A + I``."""
    n = len(graph)
    a = np.eye(n)
    for u, v in graph.edges:
        i, j = graph.index(u), graph.index(v)
        a[i, j] = a[j, i] = 1.0
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    values = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    values.setflags(write=False)
    return AdjacencyMatrix(values, graph.node_ids)
