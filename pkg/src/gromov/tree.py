"""
Weighted trees as metric spaces.

A :class:`WeightedTree` is an immutable set of string-labelled nodes joined by
positively weighted undirected edges.  A :class:`Base` fixes a base vertex
``s`` and an ordered base set ``V``; its Gromov matrix holds the pairwise
Gromov products ``(v_i, v_j)_s``.

File formats
------------
Tree file::

    tree
    u v 3
    v w 2.5

Base file: a tree file followed by ``base_vertex s`` and ``base_set v1 v2 ...``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tolerance import EPS

__all__ = [
    "UnknownNodeError",
    "WeightedTree",
    "Base",
    "tree_distance",
    "gromov_product",
    "gromov_matrix",
    "restrict_to_span",
    "bases_equivalent",
    "parse_tree",
    "format_tree",
    "parse_base",
    "format_base",
    "read_tree",
    "read_base",
    "write_base",
]


class UnknownNodeError(LookupError):
    """Raised when a node identifier is not part of the tree or graph."""

    def __init__(self, node):
        super().__init__(f"unknown node {node!r}")
        self.node = node


def _fmt_weight(w: float) -> str:
    return format(float(w), ".17g")


@dataclass(frozen=True)
class WeightedTree:
    """
    Undirected tree with strictly positive edge weights.

    Edges are normalised on construction so that ``u < v`` and the edge tuple
    is sorted; two trees with the same labelled edges therefore compare equal.
    """

    nodes: frozenset
    edges: tuple = field(default=())

    def __post_init__(self):
        nodes = frozenset(str(x) for x in self.nodes)
        norm = {}
        for u, v, w in self.edges:
            u, v, w = str(u), str(v), float(w)
            if u == v:
                raise ValueError(f"self-loop at {u!r}")
            if not w > 0:
                raise ValueError(f"edge ({u}, {v}) has non-positive weight {w}")
            key = (u, v) if u < v else (v, u)
            if key in norm:
                raise ValueError(f"duplicate edge {key}")
            for x in key:
                if x not in nodes:
                    raise UnknownNodeError(x)
            norm[key] = w
        if not nodes:
            raise ValueError("a tree needs at least one node")
        if len(norm) != len(nodes) - 1:
            raise ValueError(
                f"{len(nodes)} nodes need {len(nodes) - 1} edges, got {len(norm)}"
            )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(
            self, "edges", tuple(sorted((u, v, w) for (u, v), w in norm.items()))
        )
        # connected with |E| = |V| - 1  <=>  tree
        start = next(iter(nodes))
        seen = {start}
        stack = [start]
        while stack:
            x = stack.pop()
            for y in self.adjacency[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        if len(seen) != len(nodes):
            raise ValueError("edges do not connect all nodes")

    @classmethod
    def from_edges(cls, edges: Iterable[tuple], nodes: Iterable[str] = ()):
        edges = list(edges)
        allnodes = set(str(x) for x in nodes)
        for u, v, _ in edges:
            allnodes.add(str(u))
            allnodes.add(str(v))
        return cls(frozenset(allnodes), tuple(edges))

    @cached_property
    def adjacency(self) -> dict:
        adj = {x: {} for x in self.nodes}
        for u, v, w in self.edges:
            adj[u][v] = w
            adj[v][u] = w
        return adj

    def degree(self, node: str) -> int:
        return len(self.neighbors(node))

    def neighbors(self, node: str) -> dict:
        try:
            return self.adjacency[node]
        except KeyError:
            raise UnknownNodeError(node) from None

    def leaves(self) -> set:
        return {x for x, nb in self.adjacency.items() if len(nb) <= 1}

    def total_weight(self) -> float:
        return sum(w for _, _, w in self.edges)

    def relabel(self, mapping: dict) -> "WeightedTree":
        """Return a copy with nodes renamed through ``mapping`` (missing keys kept)."""
        f = lambda x: mapping.get(x, x)
        return WeightedTree(
            frozenset(f(x) for x in self.nodes),
            tuple((f(u), f(v), w) for u, v, w in self.edges),
        )

    def rooted(self, root: str):
        """
        Orient the tree away from ``root``.

        Returns ``(order, parent, up_weight, depth)`` where ``order`` lists nodes
        in breadth-first order, ``parent[root] is None``, ``up_weight[x]`` is the
        weight of the edge from ``x`` to its parent and ``depth[x]`` is the
        weighted distance from ``root``.
        """
        if root not in self.adjacency:
            raise UnknownNodeError(root)
        parent = {root: None}
        up = {root: 0.0}
        depth = {root: 0.0}
        order = [root]
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y, w in self.adjacency[x].items():
                if y not in parent:
                    parent[y] = x
                    up[y] = w
                    depth[y] = depth[x] + w
                    order.append(y)
                    queue.append(y)
        return order, parent, up, depth


@dataclass(frozen=True)
class Base:
    """A tree with a base vertex ``s`` and an ordered base set ``V`` (``s`` not in ``V``)."""

    tree: WeightedTree
    base_vertex: str
    base_set: tuple

    def __post_init__(self):
        object.__setattr__(self, "base_set", tuple(str(v) for v in self.base_set))
        if self.base_vertex not in self.tree.nodes:
            raise UnknownNodeError(self.base_vertex)
        if len(set(self.base_set)) != len(self.base_set):
            raise ValueError("base set entries must be distinct")
        for v in self.base_set:
            if v not in self.tree.nodes:
                raise UnknownNodeError(v)
        if self.base_vertex in self.base_set:
            raise ValueError("base vertex must not belong to the base set")

    @property
    def n(self) -> int:
        return len(self.base_set)

    def is_canonical(self) -> bool:
        """True when the tree is exactly the contracted span of ``V`` and ``s``."""
        terminals = set(self.base_set) | {self.base_vertex}
        for x, nb in self.tree.adjacency.items():
            if x in terminals:
                continue
            if len(nb) <= 2:
                return False
        return True


def tree_distance(tree: WeightedTree, u: str, v: str) -> float:
    """Sum of edge weights along the unique path between ``u`` and ``v``."""
    if v not in tree.adjacency:
        raise UnknownNodeError(v)
    _, _, _, depth = tree.rooted(u)
    return depth[v]


def gromov_product(tree: WeightedTree, s: str, u: str, v: str) -> float:
    """``(u, v)_s = (d(u, s) + d(v, s) - d(u, v)) / 2``."""
    for x in (u, v):
        if x not in tree.adjacency:
            raise UnknownNodeError(x)
    _, _, _, ds = tree.rooted(s)
    return 0.5 * (ds[u] + ds[v] - tree_distance(tree, u, v))


def _ancestor_weights(tree: WeightedTree, s: str, targets: Sequence[str]) -> np.ndarray:
    # W[i, x] = weight of edge (x, parent(x)) when x lies on [s, targets[i]]
    order, parent, up, _ = tree.rooted(s)
    index = {x: k for k, x in enumerate(order)}
    W = np.zeros((len(targets), len(order)))
    for i, v in enumerate(targets):
        if v not in index:
            raise UnknownNodeError(v)
        x = v
        while parent[x] is not None:
            W[i, index[x]] = up[x]
            x = parent[x]
    return W


def gromov_matrix(base: Base) -> np.ndarray:
    """
    Gromov matrix of ``base``: ``M[i, j] = (v_i, v_j)_s``.

    The product equals the depth of the branch point of ``v_i`` and ``v_j``
    seen from ``s``, which is the total weight shared by the two root paths.
    """
    W = _ancestor_weights(base.tree, base.base_vertex, base.base_set)
    shared = (W > 0).astype(float)
    M = W @ shared.T
    return 0.5 * (M + M.T)


def restrict_to_span(tree: WeightedTree, s: str, V: Sequence[str]) -> Base:
    """
    Canonical base spanned by ``V`` and ``s``.

    Keeps the union of the paths ``[s, v]`` and contracts every kept node of
    degree two that is not a terminal, summing the two adjacent weights.
    """
    V = tuple(str(v) for v in V)
    order, parent, up, _ = tree.rooted(s)
    terminals = set(V) | {s}
    for v in V:
        if v not in parent:
            raise UnknownNodeError(v)

    kept = {s}
    for v in V:
        x = v
        while x not in kept:
            kept.add(x)
            x = parent[x]

    kept_children = {x: 0 for x in kept}
    for x in kept:
        if parent[x] is not None:
            kept_children[parent[x]] += 1

    def is_key(x):
        return x in terminals or kept_children[x] >= 2

    edges = []
    for x in kept:
        if x == s or not is_key(x):
            continue
        w = up[x]
        p = parent[x]
        while not is_key(p):
            w += up[p]
            p = parent[p]
        edges.append((x, p, w))
    keys = {x for x in kept if is_key(x)}
    return Base(WeightedTree.from_edges(edges, keys), s, V)


def bases_equivalent(b1: Base, b2: Base, eps: float = EPS) -> bool:
    """Isometric equivalence of spanning bases, decided by matrix equality."""
    if b1.n != b2.n:
        return False
    return bool(np.allclose(gromov_matrix(b1), gromov_matrix(b2), rtol=0.0, atol=eps))


# --------------------------------------------------------------------------
# text formats
# --------------------------------------------------------------------------


def _content_lines(text: str):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_edges(lines):
    edges = []
    trailer = []
    for line in lines:
        parts = line.split()
        if parts[0] in ("base_vertex", "base_set"):
            trailer.append(parts)
            continue
        if trailer:
            raise ValueError(f"edge line after base trailer: {line!r}")
        if len(parts) != 3:
            raise ValueError(f"expected 'u v w', got {line!r}")
        edges.append((parts[0], parts[1], float(parts[2])))
    return edges, trailer


def parse_tree(text: str) -> WeightedTree:
    lines = list(_content_lines(text))
    if not lines or lines[0] != "tree":
        raise ValueError("tree file must start with a 'tree' header line")
    edges, trailer = _parse_edges(lines[1:])
    if trailer:
        raise ValueError("unexpected base trailer in a tree file")
    return WeightedTree.from_edges(edges)


def format_tree(tree: WeightedTree) -> str:
    out = ["tree"]
    out += [f"{u} {v} {_fmt_weight(w)}" for u, v, w in tree.edges]
    return "\n".join(out) + "\n"


def parse_base(text: str) -> Base:
    lines = list(_content_lines(text))
    if not lines or lines[0] != "tree":
        raise ValueError("base file must start with a 'tree' header line")
    edges, trailer = _parse_edges(lines[1:])
    fields = {parts[0]: parts[1:] for parts in trailer}
    if "base_vertex" not in fields or len(fields["base_vertex"]) != 1:
        raise ValueError("base file needs a 'base_vertex s' line")
    if "base_set" not in fields:
        raise ValueError("base file needs a 'base_set v1 ... vn' line")
    s = fields["base_vertex"][0]
    tree = WeightedTree.from_edges(edges, [s])
    return Base(tree, s, tuple(fields["base_set"]))


def format_base(base: Base) -> str:
    return (
        format_tree(base.tree)
        + f"base_vertex {base.base_vertex}\n"
        + "base_set " + " ".join(base.base_set) + "\n"
    )


def read_tree(path) -> WeightedTree:
    return parse_tree(Path(path).read_text(encoding="utf-8"))


def read_base(path) -> Base:
    return parse_base(Path(path).read_text(encoding="utf-8"))


def write_base(base: Base, path) -> None:
    Path(path).write_text(format_base(base), encoding="utf-8")
