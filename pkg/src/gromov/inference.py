"""
Network inference with spanning-tree families.

Three applications share one idea: instead of scoring a single random
spanning tree, score every member of a G-convex family synthesized from a
few seed trees.

* acquisition order: how often ``u`` lies on the propagation path ``[s, v]``
* snapshot source estimation with the centroid score
* data-center placement (greedy baseline and the Voronoi/G-convex iteration)

Tree families are handled as stacks of Gromov matrices.  The quantities each
application needs (path membership, centroid score, weighted distance sums)
are read straight off the matrix entries, which is equivalent to
reconstructing each tree and is much cheaper in batch.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .combination import g_convex_family, simplex_grid
from .graphs import (
    Exponential,
    WeightedGraph,
    arrival_times,
    bfs_tree,
    minimum_spanning_tree,
    sample_delays,
    voronoi_partition,
)
from .matrix import GromovMatrix
from .tolerance import EPS
from .tree import Base, UnknownNodeError, WeightedTree, gromov_matrix, restrict_to_span

__all__ = [
    "EstimatorProblem",
    "PlacementProblem",
    "synthesize_pairwise",
    "path_probability_matrix",
    "on_propagation_path_probability",
    "order_accuracy",
    "centroid_score",
    "centroid_scores",
    "BfsHeuristic",
    "Gromov",
    "SnapshotEstimate",
    "source_estimate_snapshot",
    "simulate_snapshot",
    "placement_cost",
    "family_placement_costs",
    "PlacementResult",
    "place_greedy",
    "place_gromov",
    "pareto_demand",
    "SnapshotOutcome",
    "MetricsReport",
    "ratio_or_none",
    "q_accuracy",
    "eval_metrics",
    "mean_cost_ratio",
]


@dataclass(frozen=True)
class EstimatorProblem:
    """An estimator ``phi(T, s)`` to average (``expectation``) or minimise over trees."""

    graph: Optional[WeightedGraph]
    criteria: str
    cost: str
    mode: str = "expectation"

    def __post_init__(self):
        if self.mode not in ("expectation", "minimization"):
            raise ValueError(f"mode must be 'expectation' or 'minimization', got {self.mode!r}")


@dataclass(frozen=True)
class PlacementProblem:
    graph: WeightedGraph
    demand: dict
    k: int
    eta: float = 1e-9

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.k > len(self.graph.nodes):
            raise ValueError(f"k={self.k} exceeds the {len(self.graph.nodes)} graph nodes")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        for x in self.graph.nodes:
            if x not in self.demand:
                raise ValueError(f"no demand for node {x!r}")
        for x, w in self.demand.items():
            self.graph.check_node(x)
            if not w >= 0:
                raise ValueError(f"negative demand at {x!r}")

    def demand_vector(self) -> np.ndarray:
        return np.array([float(self.demand[x]) for x in self.graph.nodes])


# --------------------------------------------------------------------------
# acquisition order
# --------------------------------------------------------------------------


def _theta_grid(step: float) -> np.ndarray:
    return simplex_grid(2, step)


def synthesize_pairwise(matrices: Sequence, step: float = 0.1) -> np.ndarray:
    """
    The samples themselves when there is only one; otherwise the G-convex
    combinations ``theta * A + (1 - theta) * B`` for every unordered pair and
    every ``theta`` on the grid (endpoints included, so the samples reappear).
    """
    mats = [np.asarray(m, dtype=float) for m in matrices]
    if not mats:
        raise ValueError("need at least one sample")
    if len(mats) == 1:
        return mats[0][None].copy()
    grid = _theta_grid(step)
    out = []
    for a in range(len(mats)):
        for b in range(a + 1, len(mats)):
            out.append(g_convex_family([mats[a], mats[b]], grid))
    return np.concatenate(out)


def path_probability_matrix(family: np.ndarray, eps: float = EPS) -> np.ndarray:
    """
    ``P[u, v]`` = fraction of the family in which base node ``u`` lies on the
    path from the base vertex to ``v``; the diagonal is 1.
    """
    family = np.asarray(family, dtype=float)
    if family.ndim == 2:
        family = family[None]
    diag = np.diagonal(family, axis1=1, axis2=2)
    hit = np.abs(family - diag[:, :, None]) <= eps
    return hit.mean(axis=0)


def _aligned(samples, s_label, labels):
    mats = []
    order = None
    for smp in samples:
        if isinstance(smp, Base):
            if s_label is not None and smp.base_vertex != s_label:
                raise ValueError(
                    f"sample base vertex {smp.base_vertex!r} differs from {s_label!r}"
                )
            m = gromov_matrix(smp)
            if order is None:
                order = list(smp.base_set)
            elif set(order) != set(smp.base_set):
                raise ValueError("samples must share one base set")
            pos = {x: k for k, x in enumerate(smp.base_set)}
            perm = [pos[x] for x in order]
            mats.append(m[np.ix_(perm, perm)])
        else:
            mats.append(np.asarray(smp, dtype=float))
    if order is None:
        n = mats[0].shape[0]
        order = list(labels) if labels is not None else [f"v{k + 1}" for k in range(n)]
    if any(m.shape != (len(order), len(order)) for m in mats):
        raise ValueError("samples must all have the same size")
    return mats, order


def on_propagation_path_probability(
    samples: Sequence[Union[Base, GromovMatrix, np.ndarray]],
    s_label: Optional[str],
    u_label: str,
    v_label: str,
    step: float = 0.1,
    labels: Optional[Sequence[str]] = None,
    eps: float = EPS,
) -> float:
    """
    Empirical probability that ``u`` lies on ``[s, v]`` over the samples and
    their pairwise G-convex combinations.

    Bare matrices are indexed through ``labels`` (default ``v1..vn``).  Only
    matrix entries are read, so no graph is needed.
    """
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    mats, order = _aligned(samples, s_label, labels)
    index = {x: k for k, x in enumerate(order)}
    for x in (u_label, v_label):
        if x not in index:
            raise UnknownNodeError(x)
    u, v = index[u_label], index[v_label]
    family = synthesize_pairwise(mats, step)
    diag = family[:, u, u]
    return float(np.mean(np.abs(family[:, u, v] - diag) <= eps))


def order_accuracy(estimates, truths) -> float:
    """
    Mean of ``1 - e`` where ``e = (|p1 - q1| / p1 + |p2 - q2| / p2) / 2``.

    Triples whose ground truth ``p1`` is 0 or 1 are dropped with a warning.
    Returns NaN when nothing is left.
    """
    q = np.asarray(estimates, dtype=float).ravel()
    p = np.asarray(truths, dtype=float).ravel()
    if q.shape != p.shape:
        raise ValueError("estimates and truths differ in length")
    keep = (p > 0) & (p < 1)
    dropped = int((~keep).sum())
    if dropped:
        warnings.warn(
            f"{dropped} triple(s) with ground-truth probability 0 or 1 excluded",
            RuntimeWarning,
            stacklevel=2,
        )
    if not keep.any():
        return float("nan")
    p, q = p[keep], q[keep]
    e = (np.abs(p - q) / p + np.abs(p - q) / (1 - p)) / 2
    return float(np.mean(1 - e))


# --------------------------------------------------------------------------
# centroid score
# --------------------------------------------------------------------------


def centroid_score(tree: WeightedTree, s: str) -> float:
    """Largest total edge weight among the components left after deleting ``s``."""
    order, parent, up, _ = tree.rooted(s)
    below = {x: 0.0 for x in order}
    for x in reversed(order[1:]):
        p = parent[x]
        if p != s:
            below[p] += below[x] + up[x]
    return max((below[c] for c in tree.adjacency[s]), default=0.0)


def centroid_scores(family: np.ndarray, eps: float = EPS) -> np.ndarray:
    """
    Centroid score of the base vertex for each Gromov matrix in ``family``.

    Base nodes sharing a positive product hang off the same component.  A
    component's weight is the union of its root paths minus the edge at the
    base vertex, whose length is the smallest product inside the component.
    """
    fam = np.asarray(family, dtype=float)
    single = fam.ndim == 2
    if single:
        fam = fam[None]
    b, n, _ = fam.shape
    if n == 0:
        return np.zeros(b) if not single else 0.0
    linked = fam > eps
    has = linked.any(axis=2)
    gid = np.where(has, linked.argmax(axis=2), np.arange(n)[None, :])
    lower = np.where(np.tril(np.ones((n, n), bool), -1)[None], fam, 0.0)
    overlap = np.maximum(lower.max(axis=2), 0.0)
    added = np.diagonal(fam, axis1=1, axis2=2) - overlap
    rowmin = np.where(linked, fam, np.inf).min(axis=2)
    onehot = gid[:, :, None] == np.arange(n)[None, None, :]
    span = np.einsum("bi,big->bg", added, onehot)
    stem = np.where(onehot, rowmin[:, :, None], np.inf).min(axis=1)
    comp = np.where(np.isfinite(stem), span - stem, 0.0)
    out = np.maximum(comp.max(axis=1), 0.0)
    return float(out[0]) if single else out


# --------------------------------------------------------------------------
# snapshot source estimation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BfsHeuristic:
    """One random BFS tree per candidate."""

    seed: object = 0


@dataclass(frozen=True)
class Gromov:
    """Natural-order BFS, reversed-order BFS and the diagonal, over a weight simplex."""

    grid_step: float = 0.1


@dataclass
class SnapshotEstimate:
    ranking: list
    corners_ok: bool = True
    candidates: int = 0

    @property
    def estimate(self):
        return self.ranking[0][0]

    def rank_of(self, node) -> int:
        for r, (x, _) in enumerate(self.ranking):
            if x == node:
                return r
        raise UnknownNodeError(node)


def _rank(graph, scores, direction):
    idx = graph.index
    sign = -1.0 if direction == "max" else 1.0
    # round away summation noise so equal trees tie and fall back to node order
    return sorted(scores.items(), key=lambda kv: (sign * round(kv[1], 9), idx[kv[0]]))


def source_estimate_snapshot(
    graph: WeightedGraph,
    infected: Sequence[str],
    method: Union[BfsHeuristic, Gromov],
    candidates: str = "infected",
    direction: str = "max",
) -> SnapshotEstimate:
    """
    Rank candidate sources by centroid score.

    ``candidates`` is ``"infected"`` or ``"all"``; ``direction`` ``"max"``
    ranks the largest score first, ``"min"`` the smallest.  For the Gromov
    method a candidate's score is the best over its family, and
    ``corners_ok`` records that the three pure corners of every family
    reproduce the pure-tree scores.
    """
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    infected = list(dict.fromkeys(str(x) for x in infected))
    if not infected:
        raise ValueError("infected set is empty")
    for x in infected:
        graph.check_node(x)
    idx = graph.index
    infected.sort(key=idx.__getitem__)
    if candidates == "infected":
        cands = infected
    elif candidates == "all":
        cands = list(graph.nodes)
    else:
        raise ValueError("candidates must be 'infected' or 'all'")

    pick = np.max if direction == "max" else np.min
    scores = {}
    corners_ok = True
    if isinstance(method, BfsHeuristic):
        rng = np.random.default_rng(method.seed) if not isinstance(
            method.seed, np.random.Generator) else method.seed
        for s in cands:
            V = [x for x in infected if x != s]
            tree = bfs_tree(graph, s, rng)
            if not V:
                scores[s] = 0.0
                continue
            scores[s] = centroid_score(restrict_to_span(tree, s, V).tree, s)
    elif isinstance(method, Gromov):
        grid = simplex_grid(3, method.grid_step)
        corner_rows = [int(np.flatnonzero(np.isclose(grid[:, c], 1.0))[0]) for c in range(3)]
        for s in cands:
            V = [x for x in infected if x != s]
            if not V:
                scores[s] = 0.0
                continue
            t1 = bfs_tree(graph, s, "natural")
            t2 = bfs_tree(graph, s, "reversed")
            b1, b2 = restrict_to_span(t1, s, V), restrict_to_span(t2, s, V)
            m1, m2 = gromov_matrix(b1), gromov_matrix(b2)
            d = np.diag(np.diag(m1))
            fam = g_convex_family([m1, m2, d], grid)
            sc = centroid_scores(fam)
            pure = [centroid_score(b1.tree, s), centroid_score(b2.tree, s), 0.0]
            for c, (row, m) in enumerate(zip(corner_rows, (m1, m2, d))):
                if not (np.array_equal(fam[row], m) and abs(sc[row] - pure[c]) <= 1e-9):
                    corners_ok = False
            scores[s] = float(pick(sc))
    else:
        raise TypeError(f"unknown method {method!r}")
    return SnapshotEstimate(_rank(graph, scores, direction), corners_ok, len(cands))


def simulate_snapshot(graph: WeightedGraph, seed, frac_range=(0.2, 0.3), rate: float = 1.0):
    """
    SI spread from a uniformly chosen source with exponential edge delays.
    Returns ``(source, infected)`` where ``infected`` is the first
    ``round(f * N)`` nodes to be reached, ``f`` uniform on ``frac_range``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = frac_range
    if not 0 < lo <= hi <= 1:
        raise ValueError("infected fraction must lie in (0, 1]")
    n = len(graph.nodes)
    source = graph.nodes[int(rng.integers(n))]
    delays = sample_delays(graph, Exponential(rate), rng)
    dist, _ = arrival_times(graph, source, delays)
    k = max(1, int(round(rng.uniform(lo, hi) * n)))
    idx = graph.index
    order = sorted(graph.nodes, key=lambda x: (dist[x], idx[x]))
    return source, order[:k]


# --------------------------------------------------------------------------
# placement
# --------------------------------------------------------------------------


def placement_cost(graph: WeightedGraph, demand: dict, S) -> float:
    """``sum_v w(v) * min_{s in S} d(s, v)``."""
    S = list(S)
    if not S:
        raise ValueError("center set is empty")
    for s in S:
        graph.check_node(s)
    D = graph.distances
    rows = [graph.index[s] for s in S]
    rho = D[rows].min(axis=0)
    w = [float(demand[x]) for x in graph.nodes]
    return math.fsum(wi * ri for wi, ri in zip(w, rho))


@dataclass
class PlacementResult:
    centers: tuple
    cost: float
    step_costs: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True


def place_greedy(problem: PlacementProblem) -> PlacementResult:
    """Add the node that lowers the cost most, ``k`` times; ties go to the earliest node."""
    g = problem.graph
    D = g.distances
    w = problem.demand_vector()
    rho = np.full(len(g.nodes), np.inf)
    chosen = []
    costs = []
    for _ in range(problem.k):
        trial = (w[None, :] * np.minimum(rho[None, :], D)).sum(axis=1)
        trial[chosen] = np.inf
        # every node is reachable, so at least one candidate is finite
        best = int(np.argmin(trial))
        chosen.append(best)
        rho = np.minimum(rho, D[best])
        costs.append(placement_cost(g, problem.demand, [g.nodes[c] for c in chosen]))
    centers = tuple(g.nodes[c] for c in chosen)
    return PlacementResult(centers, costs[-1], costs, problem.k, True)


def family_placement_costs(family: np.ndarray, w_base: np.ndarray, w_root: float) -> np.ndarray:
    """
    Weighted distance sums for every family member and every candidate.

    Column 0 is the base vertex, column ``j + 1`` base node ``j``; row ``g``
    is family member ``g``.
    """
    fam = np.asarray(family, dtype=float)
    diag = np.diagonal(fam, axis1=1, axis2=2)
    at_root = diag @ w_base
    # d(i, j) = M_ii + M_jj - 2 M_ij; the root is at distance M_jj from j
    at_node = (
        at_root[:, None]
        + diag * (w_base.sum() + w_root)
        - 2.0 * np.einsum("gij,i->gj", fam, w_base)
    )
    return np.concatenate([at_root[:, None], at_node], axis=1)


def place_gromov(
    problem: PlacementProblem,
    seed=0,
    grid_step: float = 0.1,
    max_iter: int = 100,
) -> PlacementResult:
    """
    Voronoi iteration over G-convex families.

    Each round splits the graph around the current centers, combines a
    minimum spanning tree and a BFS tree of every part, and moves each center
    to the node of smallest weighted tree distance sum over the family.  A
    tie keeps the current center, otherwise goes to the earliest node.
    """
    g = problem.graph
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    D = g.distances
    idx = g.index
    grid = _theta_grid(grid_step)
    start = rng.choice(len(g.nodes), size=problem.k, replace=False)
    centers = [g.nodes[int(c)] for c in start]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        owner = voronoi_partition(g, centers)
        new = []
        for c in centers:
            part = [x for x in g.nodes if owner[x] == c]
            V = [x for x in part if x != c]
            if not V:
                new.append(c)
                continue
            sub = g.induced(part)
            mst = minimum_spanning_tree(sub)
            bfs = bfs_tree(sub, c, "natural")
            m1 = gromov_matrix(Base(mst, c, V))
            m2 = gromov_matrix(Base(bfs, c, V))
            fam = g_convex_family([m1, m2], grid)
            wv = np.array([float(problem.demand[x]) for x in V])
            costs = family_placement_costs(fam, wv, float(problem.demand[c])).min(axis=0)
            best = costs.min()
            names = [c] + V
            tied = [names[j] for j in np.flatnonzero(costs <= best)]
            new.append(c if c in tied else min(tied, key=idx.__getitem__))
        moved = max(D[idx[a], idx[b]] for a, b in zip(centers, new))
        centers = new
        if moved <= problem.eta:
            converged = True
            break
    cost = placement_cost(g, problem.demand, centers)
    return PlacementResult(tuple(centers), cost, [], it, converged)


def pareto_demand(graph: WeightedGraph, seed, shape: float = 2.0, scale: float = 1.0) -> dict:
    """Classical Pareto demands (support ``[scale, inf)``), one per node in node order."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws = (rng.pareto(shape, len(graph.nodes)) + 1.0) * scale
    return {x: float(v) for x, v in zip(graph.nodes, draws)}


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SnapshotOutcome:
    source: str
    estimate: str
    error_distance: float
    rank: int
    candidates: int

    @property
    def rank_percentile(self) -> float:
        return self.rank / self.candidates


def ratio_or_none(num: float, den: float):
    """``num / den``, or None when ``den`` is zero."""
    if den == 0:
        return None
    return num / den


def q_accuracy(outcomes: Sequence[SnapshotOutcome], q: float = 0.2):
    """Fraction of trials whose true source is among the top ``ceil(q * candidates)``."""
    if not outcomes:
        return None
    hits = [o.rank < math.ceil(q * o.candidates) for o in outcomes]
    return float(np.mean(hits))


@dataclass(frozen=True)
class MetricsReport:
    d_bfs: Optional[float]
    d_gromov: Optional[float]
    error_reduction: Optional[float]
    acc_bfs: Optional[float]
    acc_gromov: Optional[float]
    detection_improvement: Optional[float]
    q: float
    trials: int


def eval_metrics(
    bfs: Sequence[SnapshotOutcome], gromov: Sequence[SnapshotOutcome], q: float = 0.2
) -> MetricsReport:
    """Paired comparison of the two snapshot estimators; undefined ratios are None."""
    if len(bfs) != len(gromov):
        raise ValueError("outcome lists must be paired")
    d_b = float(np.mean([o.error_distance for o in bfs])) if bfs else None
    d_g = float(np.mean([o.error_distance for o in gromov])) if gromov else None
    p_b, p_g = q_accuracy(bfs, q), q_accuracy(gromov, q)
    red = ratio_or_none(d_b - d_g, d_b) if d_b is not None else None
    imp = ratio_or_none(p_g - p_b, p_b) if p_b is not None else None
    return MetricsReport(d_b, d_g, red, p_b, p_g, imp, q, len(bfs))


def mean_cost_ratio(c1: Sequence[float], c2: Sequence[float]):
    """Mean of ``c1 / c2`` over trials with a nonzero ``c2``; None if there are none."""
    r = [a / b for a, b in zip(c1, c2) if b != 0]
    return float(np.mean(r)) if r else None
