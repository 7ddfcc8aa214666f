"""
Convex and G-convex combinations of Gromov matrices.

The convex combination ``M_alpha = sum_i alpha_i M_i`` is positive definite
but usually breaks the three-point condition.  The G-convex combination
repairs it by raising entries: walking the strict upper triangle from the
largest value down, whenever a processed corner and the current corner share
a rectangle with an unprocessed corner, the unprocessed one is raised to the
current value and processed next.

Three routes compute the same repaired matrix and are cross-checked in the
tests:

* :func:`gromovize`: the sorted-sequence raising procedure, entry by entry;
* :func:`g_convex_fixpoint`: repeated max-min sweeps until nothing changes;
* :func:`maxmin_closure`: bottleneck values along a maximum spanning tree,
  vectorised over a batch of matrices.  Used by the simulation drivers.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .matrix import GromovMatrix, MatrixLike, _square
from .tolerance import EPS

__all__ = [
    "CombinationWeights",
    "TripleType",
    "Inheritance",
    "PathTrace",
    "parse_weights",
    "simplex_grid",
    "convex",
    "gromovize",
    "g_convex",
    "g_convex_fixpoint",
    "maxmin_closure",
    "g_convex_family",
    "max_min",
    "triple_types",
    "check_type_inheritance",
    "trace_path",
]


@dataclass(frozen=True)
class CombinationWeights:
    """A point on the probability simplex."""

    alpha: tuple

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        if not alpha:
            raise ValueError("weights must be non-empty")
        for a in alpha:
            if a < -EPS or a > 1 + EPS:
                raise ValueError(f"weight {a} outside [0, 1]")
        if abs(sum(alpha) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {sum(alpha)!r}, not 1")
        object.__setattr__(self, "alpha", alpha)

    def __len__(self):
        return len(self.alpha)

    def __iter__(self):
        return iter(self.alpha)


def parse_weights(text: str) -> CombinationWeights:
    """Parse ``"0.5,0.5"``."""
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"cannot parse weights {text!r}") from None
    return CombinationWeights(tuple(values))


def simplex_grid(k: int, step: float) -> np.ndarray:
    """
    All weight vectors of length ``k`` whose entries are integer multiples of
    ``step`` and sum to one, in lexicographically decreasing order of the
    integer numerators (so the first row is ``(1, 0, ..., 0)``).
    """
    m = round(1.0 / step)
    if m < 1 or abs(m * step - 1.0) > 1e-9:
        raise ValueError(f"step {step} does not divide 1")

    def parts(total, slots):
        if slots == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in parts(total - first, slots - 1):
                yield (first,) + rest

    return np.array(list(parts(m, k)), dtype=float) / m


def _as_weights(weights) -> CombinationWeights:
    if isinstance(weights, CombinationWeights):
        return weights
    return CombinationWeights(tuple(weights))


def convex(matrices: Sequence[MatrixLike], weights) -> np.ndarray:
    """Entrywise weighted sum.  The result is a plain array, not a GromovMatrix."""
    weights = _as_weights(weights)
    stack = [np.asarray(m, dtype=float) for m in matrices]
    if len(stack) != len(weights):
        raise ValueError(f"{len(stack)} matrices but {len(weights)} weights")
    shapes = {m.shape for m in stack}
    if len(shapes) != 1:
        raise ValueError(f"matrices have different shapes: {sorted(shapes)}")
    out = np.zeros_like(stack[0])
    for a, m in zip(weights, stack):
        out += a * m
    return out


def gromovize(matrix: MatrixLike, eps: float = EPS) -> GromovMatrix:
    """
    The raising procedure applied to a symmetric matrix with non-negative
    entries and dominant diagonal.

    Upper-triangle entries are sorted by (value descending, row, column).
    Processing position ``t``, every rectangle ``{x_u, x_t, x_v}`` with ``x_u``
    already processed and ``x_v`` not yet processed has ``x_v`` set to ``x_t``
    and moved directly behind ``x_t`` (several such entries keep their sort
    order among themselves).
    """
    m = _square(matrix, eps).copy()
    n = m.shape[0]
    if n < 3:
        return GromovMatrix(m, check=False)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    pairs.sort(key=lambda p: (-m[p], p[0], p[1]))
    rank = {p: r for r, p in enumerate(pairs)}

    # doubly linked list over sequence positions
    nxt = {p: q for p, q in zip(pairs, pairs[1:])}
    prv = {q: p for p, q in zip(pairs, pairs[1:])}
    nxt[pairs[-1]] = None
    prv[pairs[0]] = None
    done = set()

    def unlink(p):
        a, b = prv[p], nxt[p]
        if a is not None:
            nxt[a] = b
        if b is not None:
            prv[b] = a

    def insert_after(anchor, p):
        b = nxt[anchor]
        nxt[anchor] = p
        prv[p] = anchor
        nxt[p] = b
        if b is not None:
            prv[b] = p

    def key(i, j):
        return (i, j) if i < j else (j, i)

    cur = pairs[0]
    while cur is not None:
        done.add(cur)
        i, j = cur
        value = m[i, j]
        raised = []
        for k in range(n):
            if k == i or k == j:
                continue
            a, b = key(i, k), key(j, k)
            if a in done and b not in done:
                raised.append(b)
            elif b in done and a not in done:
                raised.append(a)
        raised.sort(key=rank.__getitem__)
        anchor = cur
        for p in raised:
            m[p] = m[p[::-1]] = value
            unlink(p)
            insert_after(anchor, p)
            anchor = p
        cur = nxt[cur]
    return GromovMatrix(m, check=False)


def g_convex(matrices: Sequence[MatrixLike], weights, eps: float = EPS) -> GromovMatrix:
    """G-convex combination: :func:`gromovize` of the convex combination."""
    return gromovize(convex(matrices, weights), eps)


def max_min(values: Sequence[float], index: int) -> float:
    """``max(values[index], min of the other two)`` for a triple of reals."""
    if len(values) != 3:
        raise ValueError("max_min works on triples")
    others = [v for k, v in enumerate(values) if k != index]
    return max(values[index], min(others))


def g_convex_fixpoint(matrix: MatrixLike, return_iterations: bool = False, eps: float = EPS):
    """
    Repeated max-min sweeps.

    Each sweep replaces ``N(j, k)`` by the largest max-min of ``N(j, k)`` over
    the triples ``{N(j, k), N(l, j), N(l, k)}``, all read from the previous
    sweep.  Stops at the first sweep that changes nothing; with
    ``return_iterations`` the number of sweeps run (including that last one)
    is returned too.
    """
    cur = _square(matrix, eps).copy()
    n = cur.shape[0]
    sweeps = 0
    while True:
        sweeps += 1
        nxt = cur.copy()
        for j in range(n):
            for k in range(j + 1, n):
                best = cur[j, k]
                for l in range(n):
                    if l == j or l == k:
                        continue
                    best = max(best, max_min((cur[j, k], cur[l, j], cur[l, k]), 0))
                nxt[j, k] = nxt[k, j] = best
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    result = GromovMatrix(cur, check=False)
    return (result, sweeps) if return_iterations else result


def maxmin_closure(matrices: np.ndarray) -> np.ndarray:
    """
    Off-diagonal max-min (bottleneck) closure of one matrix or a stack.

    ``out[i, j]`` is the largest value of ``min`` along any chain
    ``i = p0, p1, ..., pm = j`` of off-diagonal entries; the diagonal is kept.
    Computed with Prim's algorithm on the maximum spanning tree, one vector
    step per node for the whole stack.
    """
    a = np.asarray(matrices, dtype=float)
    single = a.ndim == 2
    if single:
        a = a[None]
    b, n, _ = a.shape
    out = a.copy()
    if n < 3:
        return out[0] if single else out
    rows = np.arange(b)
    diag = np.einsum("bii->bi", a).copy()
    # bottleneck rows; the diagonal acts as +inf while the tree grows
    bott = a.copy()
    idx = np.arange(n)
    bott[:, idx, idx] = np.inf

    in_tree = np.zeros((b, n), dtype=bool)
    in_tree[:, 0] = True
    best = a[:, 0, :].copy()
    parent = np.zeros((b, n), dtype=np.intp)
    for _ in range(n - 1):
        cand = np.where(in_tree, -np.inf, best)
        x = np.argmax(cand, axis=1)
        w = cand[rows, x]
        p = parent[rows, x]
        row = np.minimum(bott[rows, p, :], w[:, None])
        new_row = np.where(in_tree, row, bott[rows, x, :])
        bott[rows, x, :] = new_row
        bott[rows, :, x] = new_row
        in_tree[rows, x] = True
        edge = a[rows, x, :]
        better = edge > best
        best = np.where(better, edge, best)
        parent = np.where(better, x[:, None], parent)
    out = bott
    out[:, idx, idx] = diag
    return out[0] if single else out


def g_convex_family(matrices: Sequence[MatrixLike], weight_grid: np.ndarray) -> np.ndarray:
    """
    G-convex combinations for every row of ``weight_grid``, shape
    ``(len(weight_grid), n, n)``.
    """
    stack = np.stack([np.asarray(m, dtype=float) for m in matrices])
    grid = np.asarray(weight_grid, dtype=float)
    if grid.ndim != 2 or grid.shape[1] != len(stack):
        raise ValueError("weight grid must have one column per matrix")
    combined = np.einsum("gk,kij->gij", grid, stack)
    return maxmin_closure(combined)


# --------------------------------------------------------------------------
# triple types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TripleType:
    """Partition ``{pair} | {singleton}`` of three base indices."""

    pair: frozenset
    singleton: int

    def __str__(self):
        i, j = sorted(self.pair)
        return f"{{{i},{j}}}|{{{self.singleton}}}"


def _is_type(m, i, j, l, eps):
    return abs(m[i, l] - m[j, l]) <= eps and m[i, l] <= m[i, j] + eps


def triple_types(matrix: MatrixLike, i: int, j: int, l: int, eps: float = EPS) -> list:
    """All partitions ``{a, b} | {c}`` with ``M(a,c) = M(b,c) <= M(a,b)``."""
    m = np.asarray(matrix, dtype=float)
    if len({i, j, l}) != 3:
        raise ValueError("indices must be distinct")
    out = []
    for a, b, c in ((i, j, l), (i, l, j), (j, l, i)):
        if _is_type(m, a, b, c, eps):
            out.append(TripleType(frozenset((a, b)), c))
    return out


class Inheritance(enum.Enum):
    OK = "ok"
    NOT_APPLICABLE = "not-applicable"
    COUNTEREXAMPLE = "counterexample"


def check_type_inheritance(matrices: Sequence[MatrixLike], weights, triple, eps: float = EPS):
    """
    Check that a triple whose type survives the repair unchanged carries a
    type found in one of the component matrices.

    For each labelling ``{a, b} | {c}`` with
    ``M_alpha(a,b) = M'_alpha(a,b) >= M'_alpha(a,c) = M'_alpha(b,c)`` the type
    must be a type of the triple in some component; otherwise the result is a
    counterexample.  No such labelling gives ``NOT_APPLICABLE``.
    """
    mats = [np.asarray(m, dtype=float) for m in matrices]
    mixed = convex(mats, weights)
    repaired = np.asarray(gromovize(mixed, eps))
    i, j, l = triple
    applicable = False
    for a, b, c in ((i, j, l), (i, l, j), (j, l, i)):
        hyp = (abs(mixed[a, b] - repaired[a, b]) <= eps
               and abs(repaired[a, c] - repaired[b, c]) <= eps
               and repaired[a, c] <= repaired[a, b] + eps)
        if not hyp:
            continue
        applicable = True
        if not any(_is_type(m, a, b, c, eps) for m in mats):
            return Inheritance.COUNTEREXAMPLE
    return Inheritance.OK if applicable else Inheritance.NOT_APPLICABLE


# --------------------------------------------------------------------------
# path between two matrices
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PathTrace:
    """
    G-convex combinations ``theta * M1 + (1 - theta) * M2`` sampled on a grid.

    ``thetas[0] == 0`` gives ``M2`` and ``thetas[-1] == 1`` gives ``M1``.
    """

    thetas: np.ndarray
    matrices: np.ndarray
    turning_points: tuple
    flagged: np.ndarray

    def segments(self):
        """Index ranges ``(lo, hi)`` of maximal runs of unflagged samples."""
        out = []
        lo = None
        for t, f in enumerate(self.flagged):
            if not f and lo is None:
                lo = t
            elif f and lo is not None:
                out.append((lo, t - 1))
                lo = None
        if lo is not None:
            out.append((lo, len(self.flagged) - 1))
        return out


def trace_path(m1: MatrixLike, m2: MatrixLike, grid: int, threshold: float = 1e-6) -> PathTrace:
    """
    Sample the G-convex path at ``theta = 0, 1/grid, ..., 1`` and locate its
    turning points.

    A sample is flagged when the sup-norm of the discrete second difference
    exceeds ``threshold``.  A kink between two samples flags both of them;
    its position is interpolated from the two second differences of the
    entry that kinks hardest.
    """
    a = np.asarray(m1, dtype=float)
    b = np.asarray(m2, dtype=float)
    if a.shape != b.shape:
        raise ValueError("matrices must have the same shape")
    if grid < 1:
        raise ValueError("grid must be positive")
    thetas = np.arange(grid + 1) / grid
    combined = thetas[:, None, None] * a[None] + (1 - thetas)[:, None, None] * b[None]
    mats = maxmin_closure(combined)
    flagged = np.zeros(grid + 1, dtype=bool)
    second = np.zeros_like(mats)
    if grid >= 2:
        second[1:-1] = mats[2:] - 2 * mats[1:-1] + mats[:-2]
        flagged[1:-1] = np.abs(second[1:-1]).reshape(grid - 1, -1).max(axis=1) > threshold

    h = 1.0 / grid
    turning = []
    t = 0
    while t <= grid:
        if not flagged[t]:
            t += 1
            continue
        run = [t]
        while t + 1 <= grid and flagged[t + 1]:
            t += 1
            run.append(t)
        if len(run) == 1:
            turning.append(float(thetas[run[0]]))
        else:
            # one kink per adjacent pair of flagged samples
            for lo in run[:-1]:
                s_lo = np.abs(second[lo]).reshape(-1)
                s_hi = np.abs(second[lo + 1]).reshape(-1)
                e = int(np.argmax(s_lo + s_hi))
                frac = s_hi[e] / (s_lo[e] + s_hi[e])
                turning.append(float(thetas[lo] + h * frac))
        t += 1
    return PathTrace(thetas, mats, tuple(turning), flagged)
