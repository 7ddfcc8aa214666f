"""
Weighted graphs, spanning trees, delay sampling and Voronoi partitions.

Node order matters: it is the order in which nodes were given to
:class:`WeightedGraph`, and "smallest label" in every tie-breaking rule means
earliest in that order.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .tree import UnknownNodeError, WeightedTree

__all__ = [
    "DisconnectedGraphError",
    "WeightedGraph",
    "Exponential",
    "TruncatedGaussian",
    "RngSeed",
    "ER",
    "BA",
    "Grid2D",
    "Complete",
    "bfs_tree",
    "shortest_path_tree",
    "arrival_times",
    "sample_delays",
    "voronoi_partition",
    "generate_graph",
    "parse_graph",
    "read_graph",
    "format_graph",
]


class DisconnectedGraphError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedGraph:
    """Connected undirected graph with positive edge weights."""

    nodes: tuple
    edges: tuple

    def __post_init__(self):
        nodes = tuple(str(x) for x in self.nodes)
        if len(set(nodes)) != len(nodes):
            raise ValueError("duplicate node names")
        index = {x: k for k, x in enumerate(nodes)}
        seen = set()
        edges = []
        for u, v, w in self.edges:
            u, v, w = str(u), str(v), float(w)
            for x in (u, v):
                if x not in index:
                    raise UnknownNodeError(x)
            if u == v:
                raise ValueError(f"self-loop at {u!r}")
            if not w > 0:
                raise ValueError(f"edge ({u}, {v}) has non-positive weight {w}")
            if index[u] > index[v]:
                u, v = v, u
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
            edges.append((u, v, w))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(edges))
        if nodes and len(self._component(nodes[0])) != len(nodes):
            raise DisconnectedGraphError("graph is not connected")

    @classmethod
    def from_networkx(cls, g: nx.Graph, unit_weights: bool = False) -> "WeightedGraph":
        nodes = [str(x) for x in g.nodes]
        edges = []
        for u, v, data in g.edges(data=True):
            w = 1.0 if unit_weights else float(data.get("weight", 1.0))
            edges.append((str(u), str(v), w))
        return cls(tuple(nodes), tuple(edges))

    @cached_property
    def index(self) -> dict:
        return {x: k for k, x in enumerate(self.nodes)}

    @cached_property
    def adjacency(self) -> dict:
        adj = {x: {} for x in self.nodes}
        for u, v, w in self.edges:
            adj[u][v] = w
            adj[v][u] = w
        return adj

    @cached_property
    def sorted_neighbors(self) -> dict:
        """Neighbours of each node in node order."""
        idx = self.index
        return {x: sorted(nb, key=idx.__getitem__) for x, nb in self.adjacency.items()}

    def _component(self, start):
        seen = {start}
        stack = [start]
        adj = self.adjacency
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return seen

    def check_node(self, node):
        if node not in self.index:
            raise UnknownNodeError(node)

    def weight(self, u, v) -> float:
        return self.adjacency[u][v]

    def edge_key(self, u, v) -> tuple:
        return (u, v) if self.index[u] < self.index[v] else (v, u)

    def csr(self) -> csr_matrix:
        idx = self.index
        n = len(self.nodes)
        rows, cols, vals = [], [], []
        for u, v, w in self.edges:
            rows += [idx[u], idx[v]]
            cols += [idx[v], idx[u]]
            vals += [w, w]
        return csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def distances(self) -> np.ndarray:
        """All-pairs shortest path lengths, rows and columns in node order."""
        d = dijkstra(self.csr(), directed=False)
        d.setflags(write=False)
        return d

    def induced(self, nodes: Iterable[str]) -> "WeightedGraph":
        keep = set(nodes)
        order = tuple(x for x in self.nodes if x in keep)
        edges = tuple(e for e in self.edges if e[0] in keep and e[1] in keep)
        return WeightedGraph(order, edges)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        g.add_weighted_edges_from(self.edges)
        return g

    def average_degree(self) -> float:
        return 2.0 * len(self.edges) / len(self.nodes)


# --------------------------------------------------------------------------
# random streams and delay models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RngSeed:
    """A 64-bit seed plus a stream index; equal pairs give equal draws."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.default_rng(ss)

    def child(self, *keys: int) -> "RngSeed":
        # streams nest by hashing the key path into a single index
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *keys))
        return RngSeed(self.seed, int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1)))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, RngSeed):
        return seed.generator()
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, size)


@dataclass(frozen=True)
class TruncatedGaussian:
    """Normal(mean, variance) conditioned on being positive (rejection resampling)."""

    mean: float
    variance: float = 1.0

    def __post_init__(self):
        if not (self.mean > 0 and self.variance > 0):
            raise ValueError("mean and variance must be positive")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        sd = float(np.sqrt(self.variance))
        out = rng.normal(self.mean, sd, size)
        bad = out <= 0
        while bad.any():
            out[bad] = rng.normal(self.mean, sd, int(bad.sum()))
            bad = out <= 0
        return out


DelayModel = Union[Exponential, TruncatedGaussian]


def sample_delays(graph: WeightedGraph, model: DelayModel, seed) -> dict:
    """One independent draw per edge, keyed by the graph's canonical edge tuple."""
    rng = _rng(seed)
    draws = model.draw(rng, len(graph.edges))
    return {(u, v): float(d) for (u, v, _), d in zip(graph.edges, draws)}


# --------------------------------------------------------------------------
# spanning trees
# --------------------------------------------------------------------------


def _tree_from_parents(graph: WeightedGraph, parent: dict) -> WeightedTree:
    edges = [(x, p, graph.weight(x, p)) for x, p in parent.items() if p is not None]
    return WeightedTree.from_edges(edges, graph.nodes)


def bfs_tree(graph: WeightedGraph, root: str, ordering="natural") -> WeightedTree:
    """
    Breadth-first spanning tree.

    ``ordering`` controls neighbour visitation: ``"natural"`` (node order),
    ``"reversed"``, or a seed / :class:`RngSeed` / ``Generator`` for a
    uniform shuffle of every neighbour list.  Edge weights come from the graph.
    """
    graph.check_node(root)
    nbrs = graph.sorted_neighbors
    if isinstance(ordering, str):
        if ordering not in ("natural", "reversed"):
            raise ValueError(f"unknown ordering {ordering!r}")
        rev = ordering == "reversed"
        rng = None
    else:
        rev = False
        rng = _rng(ordering)
    parent = {root: None}
    queue = deque([root])
    while queue:
        x = queue.popleft()
        nb = nbrs[x]
        if rng is not None:
            nb = [nb[k] for k in rng.permutation(len(nb))]
        elif rev:
            nb = nb[::-1]
        for y in nb:
            if y not in parent:
                parent[y] = x
                queue.append(y)
    if len(parent) != len(graph.nodes):
        raise DisconnectedGraphError("graph is not connected")
    return _tree_from_parents(graph, parent)


def arrival_times(graph: WeightedGraph, root: str, delays: dict):
    """
    Single-source shortest paths under ``delays``.

    Returns ``(dist, parent)``; equal arrival times keep the predecessor that
    is earliest in node order.
    """
    graph.check_node(root)
    idx = graph.index
    dist = {root: 0.0}
    parent = {root: None}
    done = set()
    heap = [(0.0, idx[root], root)]
    while heap:
        d, _, x = heapq.heappop(heap)
        if x in done:
            continue
        done.add(x)
        for y in graph.adjacency[x]:
            if y in done:
                continue
            try:
                w = delays[graph.edge_key(x, y)]
            except KeyError:
                raise KeyError(f"no delay for edge {graph.edge_key(x, y)}") from None
            nd = d + w
            old = dist.get(y)
            if old is None or nd < old or (nd == old and idx[x] < idx[parent[y]]):
                dist[y] = nd
                parent[y] = x
                heapq.heappush(heap, (nd, idx[y], y))
    if len(done) != len(graph.nodes):
        raise DisconnectedGraphError("graph is not connected")
    return dist, parent


def shortest_path_tree(graph: WeightedGraph, root: str, delays: dict) -> WeightedTree:
    """Earliest-arrival tree from ``root``; edges keep their graph weights."""
    _, parent = arrival_times(graph, root, delays)
    return _tree_from_parents(graph, parent)


def minimum_spanning_tree(graph: WeightedGraph) -> WeightedTree:
    """Kruskal minimum spanning tree (ties follow the graph's edge order)."""
    g = nx.Graph()
    g.add_nodes_from(graph.nodes)
    g.add_weighted_edges_from(graph.edges)
    t = nx.minimum_spanning_tree(g, algorithm="kruskal")
    return WeightedTree.from_edges(((u, v, d["weight"]) for u, v, d in t.edges(data=True)), graph.nodes)


def voronoi_partition(graph: WeightedGraph, centers: Sequence[str]) -> dict:
    """
    Assign every node to its nearest center by graph distance; ties go to the
    center listed first.  Each part induces a connected subgraph.
    """
    centers = [str(c) for c in centers]
    if not centers:
        raise ValueError("need at least one center")
    if len(set(centers)) != len(centers):
        raise ValueError("centers must be distinct")
    for c in centers:
        graph.check_node(c)
    best = {}
    heap = []
    for rank, c in enumerate(centers):
        best[c] = (0.0, rank)
        heap.append((0.0, rank, graph.index[c], c))
    heapq.heapify(heap)
    owner = {}
    while heap:
        d, rank, _, x = heapq.heappop(heap)
        if x in owner:
            continue
        owner[x] = centers[rank]
        for y, w in graph.adjacency[x].items():
            if y in owner:
                continue
            key = (d + w, rank)
            if y not in best or key < best[y]:
                best[y] = key
                heapq.heappush(heap, (d + w, rank, graph.index[y], y))
    return {x: owner[x] for x in graph.nodes}


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ER:
    n: int
    avg_deg: float
    largest_component: bool = False


@dataclass(frozen=True)
class BA:
    n: int
    m: int


@dataclass(frozen=True)
class Grid2D:
    rows: int
    cols: int


@dataclass(frozen=True)
class Complete:
    n: int


GraphKind = Union[ER, BA, Grid2D, Complete]

ER_ATTEMPTS = 1000


def _int_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def generate_graph(kind: GraphKind, seed=0) -> WeightedGraph:
    """Unit-weight random or regular graph, reproducible from ``seed``."""
    rng = _rng(seed)
    if isinstance(kind, ER):
        if kind.n < 2 or not 0 < kind.avg_deg <= kind.n - 1:
            raise ValueError(f"unsatisfiable ER parameters {kind}")
        p = kind.avg_deg / (kind.n - 1)
        for _ in range(ER_ATTEMPTS):
            g = nx.gnp_random_graph(kind.n, p, seed=_int_seed(rng))
            if nx.is_connected(g):
                return WeightedGraph.from_networkx(g, unit_weights=True)
            if kind.largest_component:
                comp = max(nx.connected_components(g), key=lambda c: (len(c), -min(c)))
                sub = g.subgraph(sorted(comp))
                return WeightedGraph.from_networkx(sub, unit_weights=True)
        raise DisconnectedGraphError(f"no connected ER graph after {ER_ATTEMPTS} attempts")
    if isinstance(kind, BA):
        if not 1 <= kind.m < kind.n:
            raise ValueError(f"unsatisfiable BA parameters {kind}")
        g = nx.barabasi_albert_graph(kind.n, kind.m, seed=_int_seed(rng))
        return WeightedGraph.from_networkx(g, unit_weights=True)
    if isinstance(kind, Grid2D):
        if kind.rows < 1 or kind.cols < 1:
            raise ValueError(f"unsatisfiable grid parameters {kind}")
        g = nx.grid_2d_graph(kind.rows, kind.cols)
        g = nx.relabel_nodes(g, {(r, c): f"{r},{c}" for r, c in g.nodes})
        return WeightedGraph.from_networkx(g, unit_weights=True)
    if isinstance(kind, Complete):
        if kind.n < 1:
            raise ValueError(f"unsatisfiable complete-graph parameters {kind}")
        return WeightedGraph.from_networkx(nx.complete_graph(kind.n), unit_weights=True)
    raise TypeError(f"unknown graph kind {kind!r}")


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def parse_graph(text: str, unit_weights: bool = False) -> WeightedGraph:
    """
    ``graph`` header, an optional ``nodes a b ...`` line fixing node order,
    then ``u v w`` lines; or a bare whitespace-separated edge list (``u v`` or
    ``u v w``).  Duplicate and self-loop lines in bare edge
    lists are dropped; the result is the largest connected component.
    """
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line and not line.startswith("%"):
            lines.append(line.split())
    strict = bool(lines) and lines[0] == ["graph"]
    if strict:
        lines = lines[1:]
    nodes = {}
    edges = {}
    if strict and lines and lines[0][0] == "nodes":
        for x in lines[0][1:]:
            if x in nodes:
                raise ValueError(f"node {x!r} listed twice")
            nodes[x] = None
        lines = lines[1:]
    for parts in lines:
        if len(parts) not in (2, 3) or (strict and len(parts) != 3):
            raise ValueError(f"cannot parse edge line {' '.join(parts)!r}")
        u, v = parts[0], parts[1]
        w = 1.0 if unit_weights or len(parts) == 2 else float(parts[2])
        if u == v:
            if strict:
                raise ValueError(f"self-loop at {u!r}")
            continue
        nodes.setdefault(u, None)
        nodes.setdefault(v, None)
        key = (u, v) if (u, v) not in edges and (v, u) not in edges else None
        if key is None:
            if strict:
                raise ValueError(f"duplicate edge ({u}, {v})")
            continue
        edges[key] = w
    edge_list = [(u, v, w) for (u, v), w in edges.items()]
    if strict:
        return WeightedGraph(tuple(nodes), tuple(edge_list))
    g = nx.Graph()
    g.add_nodes_from(nodes)
    g.add_weighted_edges_from(edge_list)
    comp = max(nx.connected_components(g), key=len)
    order = tuple(x for x in nodes if x in comp)
    return WeightedGraph(order, tuple(e for e in edge_list if e[0] in comp))


def read_graph(path, unit_weights: bool = False) -> WeightedGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"), unit_weights)


def format_graph(graph: WeightedGraph) -> str:
    out = ["graph", "nodes " + " ".join(graph.nodes)]
    out += [f"{u} {v} {format(w, '.17g')}" for u, v, w in graph.edges]
    return "\n".join(out) + "\n"
