"""
Gromov matrices: validation, tree reconstruction, the Gromovication stack
calculus, spectral bounds and base-set adjacency.

Matrices are plain ``numpy`` arrays.  :class:`GromovMatrix` is a thin
read-only wrapper used where the type should say "this passed validation";
every function here also accepts raw arrays.

Indices are 0-based throughout the Python API.  Files and CLI messages use
1-based indices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .tolerance import EPS
from .tree import Base, WeightedTree, restrict_to_span

__all__ = [
    "StructuralError",
    "InvalidGromovMatrix",
    "ProgramError",
    "Violation",
    "GromovMatrix",
    "Init",
    "DirectSum",
    "ExtensionI",
    "ExtensionII",
    "BuildProgram",
    "validate",
    "is_gromov",
    "check_three_point",
    "reconstruct_tree",
    "apply_program",
    "decompose",
    "lambda_min_bound",
    "lambda_min",
    "corner_matrix",
    "lemma_a1_lambda_min",
    "gv_adjacency",
    "on_path",
    "on_path_from_base",
    "parse_matrix",
    "format_matrix_csv",
    "format_matrix_json",
    "read_matrix",
    "write_matrix",
    "parse_program",
    "format_program",
]


class StructuralError(ValueError):
    """Input is not a square symmetric matrix."""


class ProgramError(ValueError):
    """Malformed Gromovication program; ``index`` is the offending op (0-based)."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"op {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class Violation:
    """First failed condition of the characterisation: ``"a"``, ``"b"`` or ``"c"``."""

    condition: str
    indices: tuple
    detail: str = ""

    def __str__(self):
        where = ",".join(str(i + 1) for i in self.indices)
        names = {"a": "non-negativity / positive diagonal",
                 "b": "diagonal dominance",
                 "c": "three-point condition"}
        msg = f"condition ({self.condition}) {names[self.condition]} fails at ({where})"
        return f"{msg}: {self.detail}" if self.detail else msg


class InvalidGromovMatrix(ValueError):
    def __init__(self, violation: Violation):
        super().__init__(str(violation))
        self.violation = violation


class GromovMatrix:
    """Read-only symmetric matrix known to satisfy the tree characterisation."""

    __slots__ = ("_entries",)

    def __init__(self, entries, *, check: bool = True, eps: float = EPS):
        a = np.array(entries, dtype=float)
        if check:
            v = validate(a, eps=eps)
            if v is not None:
                raise InvalidGromovMatrix(v)
        a.setflags(write=False)
        self._entries = a

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def n(self) -> int:
        return self._entries.shape[0]

    @property
    def shape(self):
        return self._entries.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._entries
        return self._entries.astype(dtype)

    def __getitem__(self, key):
        return self._entries[key]

    def __eq__(self, other):
        if isinstance(other, GromovMatrix):
            return np.array_equal(self._entries, other._entries)
        return NotImplemented

    __hash__ = None

    def __repr__(self):
        return f"GromovMatrix({self._entries.tolist()!r})"


MatrixLike = Union[np.ndarray, GromovMatrix, Sequence[Sequence[float]]]


def _square(matrix: MatrixLike, eps: float = EPS) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise StructuralError(f"expected a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=eps):
        i, j = np.argwhere(np.abs(m - m.T) > eps)[0]
        raise StructuralError(f"matrix is not symmetric at ({i + 1},{j + 1})")
    return m


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def _middle_minus_low(a, b, c):
    lo = np.minimum(np.minimum(a, b), c)
    mid = np.maximum(np.minimum(a, b), np.minimum(np.maximum(a, b), c))
    return mid - lo


def check_three_point(matrix: MatrixLike, eps: float = EPS) -> list:
    """
    Triples ``(i, j, k)``, ``i < j < k``, whose two smallest off-diagonal
    corners differ by more than ``eps``.
    """
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    found = []
    for k in range(2, n):
        a = m[:k, :k]
        b = m[:k, k][:, None]
        c = m[:k, k][None, :]
        gap = _middle_minus_low(a, b, c)
        bad = np.argwhere(np.triu(gap > eps, 1))
        found.extend((int(i), int(j), k) for i, j in bad)
    found.sort()
    return found


def validate(matrix: MatrixLike, eps: float = EPS):
    """
    Check the tree characterisation of a symmetric matrix.

    Returns ``None`` when the matrix is the Gromov matrix of a weighted tree,
    otherwise the first :class:`Violation` found, testing conditions (a), (b)
    and (c) in that order.  Raises :class:`StructuralError` for non-square or
    non-symmetric input.
    """
    m = _square(matrix, eps)
    n = m.shape[0]
    neg = np.argwhere(m < -eps)
    if len(neg):
        i, j = (int(x) for x in neg[0])
        return Violation("a", (i, j), f"entry {m[i, j]:g} is negative")
    diag = np.diag(m)
    for i in range(n):
        if not diag[i] > eps:
            return Violation("a", (i, i), f"diagonal entry {diag[i]:g} is not positive")
    over = np.argwhere(m > diag[:, None] + eps)
    if len(over):
        i, j = (int(x) for x in over[0])
        return Violation("b", (i, j), f"M({i + 1},{i + 1})={m[i, i]:g} < M({i + 1},{j + 1})={m[i, j]:g}")
    bad = check_three_point(m, eps)
    if bad:
        i, j, k = bad[0]
        vals = (m[i, j], m[i, k], m[j, k])
        return Violation("c", (i, j, k), "two smallest of {:g}, {:g}, {:g} differ".format(*vals))
    return None


def is_gromov(matrix: MatrixLike, eps: float = EPS) -> bool:
    try:
        return validate(matrix, eps) is None
    except StructuralError:
        return False


# --------------------------------------------------------------------------
# reconstruction
# --------------------------------------------------------------------------


def reconstruct_tree(matrix: MatrixLike, labels: Sequence[str] | None = None,
                     base_vertex: str = "s", eps: float = EPS) -> Base:
    """
    Build a canonical base whose Gromov matrix is ``matrix``.

    Rows are inserted one at a time.  Row ``n`` hangs off the path to the
    earlier row ``j`` with the largest product ``M[j, n]`` (first index on
    ties), at depth ``M[j, n]``, with a pendant edge of length
    ``M[n, n] - M[j, n]``.  A zero-length pendant places the new base node on
    the path itself.
    """
    m = _square(matrix, eps)
    violation = validate(m, eps)
    if violation is not None:
        raise InvalidGromovMatrix(violation)
    n = m.shape[0]
    if labels is None:
        labels = [f"v{i + 1}" for i in range(n)]
    labels = [str(x) for x in labels]
    if len(labels) != n or len(set(labels)) != n or base_vertex in labels:
        raise ValueError("labels must be n distinct names different from the base vertex")

    # node ids: 0 is the base vertex; base row i lives at node_of[i]
    parent = [None]
    up = [0.0]
    depth = [0.0]
    row_at = [None]
    node_of = []

    def new_node(p, w, d):
        parent.append(p)
        up.append(w)
        depth.append(d)
        row_at.append(None)
        return len(parent) - 1

    for r in range(n):
        if r == 0:
            j, target = None, 0.0
        else:
            j = int(np.argmax(m[r, :r]))
            target = max(float(m[r, j]), 0.0)
        # locate the point at depth `target` on [s, v_j]
        if j is None or target <= eps:
            point = 0
        else:
            x = node_of[j]
            if abs(depth[x] - target) <= eps:
                point = x
            else:
                while True:
                    px = parent[x]
                    if abs(depth[px] - target) <= eps:
                        point = px
                        break
                    if depth[px] < target:
                        q = new_node(px, target - depth[px], target)
                        up[x] = depth[x] - target
                        parent[x] = q
                        point = q
                        break
                    x = px
        pendant = m[r, r] - depth[point]
        if pendant > eps:
            node_of.append(new_node(point, pendant, m[r, r]))
            row_at[-1] = r
        else:
            if point == 0 or row_at[point] is not None:
                other = "the base vertex" if point == 0 else f"row {row_at[point] + 1}"
                raise ValueError(f"row {r + 1} coincides with {other}; zero-length edge")
            row_at[point] = r
            node_of.append(point)

    used = set(labels) | {base_vertex}
    names = []
    counter = 0
    for x in range(len(parent)):
        if x == 0:
            names.append(base_vertex)
        elif row_at[x] is not None:
            names.append(labels[row_at[x]])
        else:
            counter += 1
            while f"p{counter}" in used:
                counter += 1
            names.append(f"p{counter}")
    edges = [(names[x], names[parent[x]], up[x]) for x in range(1, len(parent))]
    tree = WeightedTree.from_edges(edges, [base_vertex])
    return Base(tree, base_vertex, tuple(labels))


# --------------------------------------------------------------------------
# Gromovication operations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Init:
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"Init needs a > 0, got {self.a}")


@dataclass(frozen=True)
class DirectSum:
    pass


@dataclass(frozen=True)
class ExtensionI:
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"ExtensionI needs a > 0, got {self.a}")


@dataclass(frozen=True)
class ExtensionII:
    a: float
    b: float

    def __post_init__(self):
        if not (self.b > 0 and self.a >= self.b):
            raise ValueError(f"ExtensionII needs a >= b > 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class BuildProgram:
    """
    Stack program plus the row permutation applied at the end.

    ``permutation[r]`` is the final row index of the ``r``-th row produced by
    the stack machine; ``None`` means identity.
    """

    ops: tuple
    permutation: tuple | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.permutation is not None:
            object.__setattr__(self, "permutation", tuple(int(p) for p in self.permutation))


def _run(ops, on_init, on_sum, on_ext1, on_ext2):
    stack = []
    if not ops:
        raise ProgramError("empty program")
    for idx, op in enumerate(ops):
        if isinstance(op, Init):
            stack.append(on_init(op))
        elif isinstance(op, DirectSum):
            if len(stack) < 2:
                raise ProgramError("direct sum needs two matrices on the stack", idx)
            right = stack.pop()
            left = stack.pop()
            stack.append(on_sum(left, right))
        elif isinstance(op, ExtensionI):
            if not stack:
                raise ProgramError("extension I on an empty stack", idx)
            stack.append(on_ext1(stack.pop(), op))
        elif isinstance(op, ExtensionII):
            if not stack:
                raise ProgramError("extension II on an empty stack", idx)
            stack.append(on_ext2(stack.pop(), op))
        else:
            raise ProgramError(f"unknown operation {op!r}", idx)
    if len(stack) != 1:
        raise ProgramError(f"program leaves {len(stack)} matrices on the stack", len(ops) - 1)
    return stack[0]


def _apply_unpermuted(ops) -> np.ndarray:
    def ext2(m, op):
        k = m.shape[0]
        out = np.full((k + 1, k + 1), float(op.b))
        out[:k, :k] = m + op.a
        return out

    def dsum(left, right):
        k, l = left.shape[0], right.shape[0]
        out = np.zeros((k + l, k + l))
        out[:k, :k] = left
        out[k:, k:] = right
        return out

    return _run(
        ops,
        lambda op: np.array([[float(op.a)]]),
        dsum,
        lambda m, op: m + op.a,
        ext2,
    )


def apply_program(program: BuildProgram) -> GromovMatrix:
    """Execute the stack machine and conjugate by the recorded permutation."""
    built = _apply_unpermuted(program.ops)
    n = built.shape[0]
    perm = program.permutation
    if perm is None:
        return GromovMatrix(built, check=False)
    if sorted(perm) != list(range(n)):
        raise ProgramError(f"permutation {perm} is not an ordering of {n} rows")
    out = np.empty_like(built)
    idx = np.asarray(perm)
    out[np.ix_(idx, idx)] = built
    return GromovMatrix(out, check=False)


def lambda_min_bound(program: BuildProgram, eps: float = EPS) -> float:
    """
    Lower bound on the smallest eigenvalue of ``apply_program(program)``
    propagated through the operations.
    """

    def ext2(state, op):
        bound, n = state
        if op.a - op.b > eps:
            return min(bound, op.b - op.b * op.b / op.a), n + 1
        return bound / (n + 1 + bound / op.a), n + 1

    bound, _ = _run(
        program.ops,
        lambda op: (float(op.a), 1),
        lambda l, r: (min(l[0], r[0]), l[1] + r[1]),
        lambda state, op: state,
        ext2,
    )
    return bound


def decompose(base: Base, eps: float = EPS) -> BuildProgram:
    """
    Gromovication program producing ``gromov_matrix(base)``.

    The base is first contracted to its span.  Working outward from ``s``:
    several branches at a node become a direct sum (branch holding the
    earliest base-set member first); a non-base branch point reached by an
    edge of length ``a`` becomes an extension I; a base node at distance
    ``b`` becomes an extension II, absorbing the edge to a following
    non-base branch point into ``a``.
    """
    if not base.base_set:
        raise ValueError("cannot decompose a base with an empty base set")
    canon = restrict_to_span(base.tree, base.base_vertex, base.base_set)
    tree = canon.tree
    order, parent, up, _ = tree.rooted(canon.base_vertex)
    row = {v: i for i, v in enumerate(canon.base_set)}
    children = {x: [] for x in order}
    for x in order[1:]:
        children[parent[x]].append(x)

    first_row = {}
    for x in reversed(order):
        own = [row[x]] if x in row else []
        first_row[x] = min(own + [first_row[c] for c in children[x]])

    ops = []
    rows = []

    def from_vertex(x):
        kids = sorted(children[x], key=lambda c: first_row[c])
        for k, c in enumerate(kids):
            branch(c)
            if k:
                ops.append(DirectSum())

    def branch(c):
        w = up[c]
        if c in row:
            kids = children[c]
            if not kids:
                ops.append(Init(w))
            elif len(kids) == 1 and kids[0] not in row:
                g = kids[0]
                from_vertex(g)
                ops.append(ExtensionII(w + up[g], w))
            else:
                from_vertex(c)
                ops.append(ExtensionII(w, w))
            rows.append(row[c])
        else:
            from_vertex(c)
            ops.append(ExtensionI(w))

    from_vertex(canon.base_vertex)
    perm = tuple(rows)
    if perm == tuple(range(len(rows))):
        perm = None
    return BuildProgram(tuple(ops), perm)


# --------------------------------------------------------------------------
# spectrum
# --------------------------------------------------------------------------


def lambda_min(matrix: MatrixLike) -> float:
    """Smallest eigenvalue of a symmetric matrix (LAPACK ``syevd``)."""
    m = np.asarray(matrix, dtype=float)
    return float(np.linalg.eigvalsh(m)[0])


def corner_matrix(n: int, alpha: float) -> np.ndarray:
    """All-ones ``n x n`` matrix whose bottom-right entry is ``1 - alpha``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    m = np.ones((n, n))
    m[-1, -1] = 1.0 - alpha
    return m


def lemma_a1_lambda_min(n: int, alpha: float) -> float:
    """Closed-form smallest eigenvalue of :func:`corner_matrix`."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    t = n - alpha
    return (t - math.sqrt(t * t + 4 * (n - 1) * alpha)) / 2


# --------------------------------------------------------------------------
# relative position of base nodes
# --------------------------------------------------------------------------


def gv_adjacency(matrix: MatrixLike, eps: float = EPS) -> np.ndarray:
    """
    Adjacency of the graph on base nodes joining ``i`` and ``j`` when no third
    base node lies on the tree path between them.
    """
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    adj = ~np.eye(n, dtype=bool)
    diag = np.diag(m)
    for k in range(n):
        # v_k on [v_i, v_j]  <=>  M(k,k) + M(i,j) == M(i,k) + M(k,j)
        between = np.abs(diag[k] + m - m[:, k][:, None] - m[k, :][None, :]) <= eps
        between[k, :] = False
        between[:, k] = False
        adj &= ~between
    return adj.astype(np.int8)


def _check_indices(n, *idx):
    for i in idx:
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for a {n}x{n} matrix")


def on_path(matrix: MatrixLike, k: int, i: int, j: int, eps: float = EPS) -> bool:
    """Whether base node ``k`` lies on the tree path between base nodes ``i`` and ``j``."""
    m = np.asarray(matrix, dtype=float)
    _check_indices(m.shape[0], k, i, j)
    if len({k, i, j}) != 3:
        raise ValueError("indices must be distinct")
    return bool(abs(m[k, k] + m[i, j] - m[i, k] - m[k, j]) <= eps)


def on_path_from_base(matrix: MatrixLike, k: int, j: int, eps: float = EPS) -> bool:
    """Whether base node ``k`` lies on the path from the base vertex to node ``j``."""
    m = np.asarray(matrix, dtype=float)
    _check_indices(m.shape[0], k, j)
    return bool(abs(m[k, j] - m[k, k]) <= eps)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def parse_matrix(text: str) -> np.ndarray:
    """CSV rows or a JSON object ``{"n": n, "entries": [...row-major...]}``."""
    stripped = text.strip()
    if stripped.startswith("{"):
        obj = json.loads(stripped)
        n = int(obj["n"])
        entries = np.asarray(obj["entries"], dtype=float).reshape(-1)
        if entries.size != n * n:
            raise ValueError(f"expected {n * n} entries, got {entries.size}")
        return entries.reshape(n, n)
    rows = []
    for line in stripped.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append([float(x) for x in line.split(",")])
    if not rows:
        raise ValueError("empty matrix file")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ValueError("ragged CSV rows")
    return np.asarray(rows)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_matrix_csv(matrix: MatrixLike) -> str:
    m = np.asarray(matrix, dtype=float)
    return "".join(",".join(_fmt(x) for x in row) + "\n" for row in m)


def format_matrix_json(matrix: MatrixLike) -> str:
    m = np.asarray(matrix, dtype=float)
    return json.dumps({"n": m.shape[0], "entries": [float(x) for x in m.reshape(-1)]}) + "\n"


def read_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text(encoding="utf-8"))


def write_matrix(matrix: MatrixLike, path) -> None:
    path = Path(path)
    text = format_matrix_json(matrix) if path.suffix == ".json" else format_matrix_csv(matrix)
    path.write_text(text, encoding="utf-8")


def parse_program(text: str) -> BuildProgram:
    """
    One operation per line::

        init 3
        init 3
        dsum
        ext2 5 2
        perm 2 1 3      # optional, 1-based
    """
    ops = []
    perm = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *args = line.split()
        try:
            if word == "init" and len(args) == 1:
                ops.append(Init(float(args[0])))
            elif word == "dsum" and not args:
                ops.append(DirectSum())
            elif word == "ext1" and len(args) == 1:
                ops.append(ExtensionI(float(args[0])))
            elif word == "ext2" and len(args) == 2:
                ops.append(ExtensionII(float(args[0]), float(args[1])))
            elif word == "perm" and args:
                perm = tuple(int(a) - 1 for a in args)
            else:
                raise ProgramError(f"line {lineno}: cannot parse {line!r}")
        except ValueError as exc:
            if isinstance(exc, ProgramError):
                raise
            raise ProgramError(f"line {lineno}: {exc}") from None
    return BuildProgram(tuple(ops), perm)


def format_program(program: BuildProgram) -> str:
    out = []
    for op in program.ops:
        if isinstance(op, Init):
            out.append(f"init {_fmt(op.a)}")
        elif isinstance(op, DirectSum):
            out.append("dsum")
        elif isinstance(op, ExtensionI):
            out.append(f"ext1 {_fmt(op.a)}")
        else:
            out.append(f"ext2 {_fmt(op.a)} {_fmt(op.b)}")
    if program.permutation is not None:
        out.append("perm " + " ".join(str(p + 1) for p in program.permutation))
    return "\n".join(out) + "\n"
