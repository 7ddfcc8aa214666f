"""
Acceptance criteria, one function each.

Every ``criterion_*`` returns ``(ok, detail)``.  Under pytest each becomes a
test and a PASS/FAIL line per criterion is printed in the terminal summary;
``python tests/test_acceptance.py`` prints the same lines directly.
"""

import itertools
import math
import statistics
import sys
import time
from fractions import Fraction
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gromov.combination import (  # noqa: E402
    Inheritance,
    check_type_inheritance,
    convex,
    g_convex,
    g_convex_fixpoint,
    trace_path,
)
from gromov.experiments import ExperimentConfig, run_trials  # noqa: E402
from gromov.graphs import Grid2D, generate_graph  # noqa: E402
from gromov.inference import (  # noqa: E402
    PlacementProblem,
    mean_cost_ratio,
    pareto_demand,
    place_greedy,
    place_gromov,
)
from gromov.matrix import (  # noqa: E402
    BuildProgram,
    DirectSum,
    ExtensionII,
    Init,
    apply_program,
    decompose,
    gv_adjacency,
    lambda_min,
    lambda_min_bound,
    lemma_a1_lambda_min,
    corner_matrix,
    on_path,
    on_path_from_base,
    reconstruct_tree,
    validate,
)
from gromov.tree import gromov_matrix  # noqa: E402

from _gen import random_program  # noqa: E402

RESULTS = {}

M1 = [[4, 1, 3, 1], [1, 4, 1, 1], [3, 1, 4, 1], [1, 1, 1, 4]]
M2 = [[4, 1, 1, 1], [1, 4, 3, 2], [1, 3, 4, 2], [1, 2, 2, 4]]
M_ALPHA = [[4, 1, 2, 1], [1, 4, 2, 1.5], [2, 2, 4, 1.5], [1, 1.5, 1.5, 4]]
M_ALPHA_G = [[4, 2, 2, 1.5], [2, 4, 2, 1.5], [2, 2, 4, 1.5], [1.5, 1.5, 1.5, 4]]


def _frac(rows):
    return [[Fraction(x) for x in r] for r in rows]


def _programs(count=1000, seed=20240601):
    rng = np.random.default_rng(seed)
    return [random_program(rng, n_max=10, lo=0.1, hi=10.0) for _ in range(count)]


def criterion_1():
    m1, m2 = np.array(M1, float), np.array(M2, float)
    conv = convex([m1, m2], (0.5, 0.5))
    gc = np.asarray(g_convex([m1, m2], (0.5, 0.5)))
    exact = _frac(conv.tolist()) == _frac(M_ALPHA) and _frac(gc.tolist()) == _frac(M_ALPHA_G)
    times = []
    for _ in range(20):
        t = time.perf_counter()
        convex([m1, m2], (0.5, 0.5))
        g_convex([m1, m2], (0.5, 0.5))
        times.append(time.perf_counter() - t)
    med = statistics.median(times)
    return exact and med < 1e-3, f"exact={exact} median runtime {med * 1e3:.3f} ms"


def criterion_2():
    v1 = validate([[1, 3], [3, 10]])
    v2 = validate([[3, 2, 1], [2, 3, 2], [1, 2, 3]])
    ok = v1 is not None and v1.condition == "b" and v2 is not None and v2.condition == "c"
    return ok, f"first -> ({v1.condition if v1 else None}), second -> ({v2.condition if v2 else None})"


def criterion_3():
    p = BuildProgram((Init(3), Init(3), DirectSum(), ExtensionII(5, 2)))
    m = np.asarray(apply_program(p))
    ev = np.linalg.eigvalsh(m)
    lo, hi = (15 - math.sqrt(153)) / 2, (15 + math.sqrt(153)) / 2
    bound = lambda_min_bound(p)
    ok = (abs(ev[0] - 1.315) <= 1e-3 and bound == 1.2
          and abs(ev[0] - lo) <= 1e-6 and abs(ev[1] - 3) <= 1e-6 and abs(ev[2] - hi) <= 1e-6)
    return ok, f"eigenvalues {ev.round(6).tolist()} bound {bound!r}"


def criterion_4():
    t = time.perf_counter()
    bad = []
    for k, p in enumerate(_programs()):
        m = np.asarray(apply_program(p))
        if validate(m) is not None:
            bad.append((k, "validate"))
            continue
        base = reconstruct_tree(m)
        if not np.allclose(gromov_matrix(base), m, rtol=0, atol=1e-9):
            bad.append((k, "reconstruct"))
        if not np.allclose(np.asarray(apply_program(decompose(base))), m, rtol=0, atol=1e-9):
            bad.append((k, "decompose"))
    dt = time.perf_counter() - t
    return not bad and dt < 30, f"1000 programs, failures {bad[:3]}, {dt:.1f} s"


def criterion_5():
    worst_gap = math.inf
    bad = []
    for k, p in enumerate(_programs()):
        m = np.asarray(apply_program(p))
        lam = lambda_min(m)
        b = lambda_min_bound(p)
        worst_gap = min(worst_gap, lam + 1e-9 - b)
        if not (lam > 0 and b <= lam + 1e-9):
            bad.append(k)
    return not bad, f"failures {bad[:3]}, min(lambda_min + 1e-9 - bound) = {worst_gap:.3g}"


def criterion_6():
    rng = np.random.default_rng(6)
    bad = []
    slow = []
    for k in range(500):
        n = int(rng.integers(2, 9))
        kk = int(rng.integers(1, 5))
        mats = [np.asarray(apply_program(random_program(rng, n=n))) for _ in range(kk)]
        w = rng.dirichlet(np.ones(kk))
        w = w / w.sum()
        mix = convex(mats, w)
        a = np.asarray(g_convex(mats, w))
        b, sweeps = g_convex_fixpoint(mix, return_iterations=True)
        if not np.array_equal(a, np.asarray(b)):
            bad.append(k)
        if sweeps > max(1, n * (n - 1) // 2):
            slow.append((k, n, sweeps))
    return not bad and not slow, f"mismatches {bad[:3]}, over-budget sweeps {slow[:3]}"


def _single_turn_pair(rng):
    x2, x1 = sorted(rng.choice(np.arange(1, 10), 2, replace=False).astype(float))
    y1, y2 = sorted(rng.choice(np.arange(1, 10), 2, replace=False).astype(float))
    d = rng.integers(10, 15, 3).astype(float)
    e = rng.integers(10, 15, 3).astype(float)
    a = np.array([[d[0], x1, x2], [x1, d[1], x2], [x2, x2, d[2]]])
    b = np.array([[e[0], y1, y1], [y1, e[1], y2], [y1, y2, e[2]]])
    return a, b, (y2 - y1) / ((x1 - x2) + (y2 - y1))


def _affine_ok(tr, tol=1e-7):
    for lo, hi in tr.segments():
        if hi - lo < 2:
            continue
        t0, t1 = tr.thetas[lo], tr.thetas[hi]
        for t in range(lo + 1, hi):
            lam = (tr.thetas[t] - t0) / (t1 - t0)
            line = (1 - lam) * tr.matrices[lo] + lam * tr.matrices[hi]
            if np.abs(tr.matrices[t] - line).max() > tol:
                return False
    return True


def criterion_7():
    rng = np.random.default_rng(7)
    invalid = affine = 0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        a = np.asarray(apply_program(random_program(rng, n=n, lo=1, hi=10, integer=True)))
        b = np.asarray(apply_program(random_program(rng, n=n, lo=1, hi=10, integer=True)))
        tr = trace_path(a, b, 1000)
        invalid += sum(validate(m) is not None for m in tr.matrices)
        affine += not _affine_ok(tr)
    worst = 0.0
    miss = 0
    for _ in range(100):
        a, b, theta = _single_turn_pair(rng)
        tr = trace_path(a, b, 1000)
        if len(tr.turning_points) != 1:
            miss += 1
            continue
        worst = max(worst, abs(tr.turning_points[0] - theta))
    ok = invalid == 0 and affine == 0 and miss == 0 and worst < 1e-3
    return ok, (f"invalid samples {invalid}, non-affine paths {affine}, "
                f"single-turn misses {miss}, worst offset {worst:.2e}")


def criterion_8():
    rng = np.random.default_rng(8)
    applicable = counter = 0
    while applicable < 1000:
        n = int(rng.integers(3, 7))
        k = int(rng.integers(2, 5))
        mats = [np.asarray(apply_program(random_program(rng, n=n))) for _ in range(k)]
        w = rng.dirichlet(np.ones(k))
        w = w / w.sum()
        triple = tuple(int(x) for x in rng.choice(n, 3, replace=False))
        r = check_type_inheritance(mats, w, triple)
        if r is Inheritance.NOT_APPLICABLE:
            continue
        applicable += 1
        counter += r is Inheritance.COUNTEREXAMPLE
    return counter == 0, f"{applicable} applicable instances, {counter} counterexamples"


def criterion_9():
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(200):
        n = int(rng.integers(1, 11))
        m1 = np.asarray(apply_program(random_program(rng, n=n)))
        d = np.diag(rng.uniform(0.1, 10.0, n))
        for k in range(21):
            th = k / 20
            bad += validate(convex([m1, d], (th, 1 - th))) is not None
    return bad == 0, f"{bad} invalid combinations out of 4200"


def _path_nodes(tree, u, v):
    g = nx.Graph()
    g.add_edges_from((a, b) for a, b, _ in tree.edges)
    return set(nx.shortest_path(g, u, v))


def criterion_10():
    rng = np.random.default_rng(10)
    gv_bad = path_bad = 0
    for _ in range(500):
        m = np.asarray(apply_program(random_program(rng, n_max=8)))
        base = reconstruct_tree(m)
        V = base.base_set
        n = len(V)
        paths = {(i, j): _path_nodes(base.tree, V[i], V[j]) for i, j in itertools.permutations(range(n), 2)}
        brute = np.zeros((n, n), dtype=np.int8)
        for i, j in itertools.combinations(range(n), 2):
            if not any(V[k] in paths[i, j] for k in range(n) if k not in (i, j)):
                brute[i, j] = brute[j, i] = 1
        gv_bad += not np.array_equal(gv_adjacency(m), brute)
        for i, j, k in itertools.permutations(range(n), 3):
            path_bad += on_path(m, k, i, j) != (V[k] in paths[i, j])
        for k, j in itertools.product(range(n), repeat=2):
            root = _path_nodes(base.tree, base.base_vertex, V[j])
            path_bad += on_path_from_base(m, k, j) != (V[k] in root)
    return gv_bad == 0 and path_bad == 0, f"G_V mismatches {gv_bad}, on-path mismatches {path_bad}"


def criterion_11():
    worst = 0.0
    for n in range(2, 13):
        for a in (0.1, 0.5, 1, 2, 3):
            worst = max(worst, abs(lemma_a1_lambda_min(n, a) - lambda_min(corner_matrix(n, a))))
    return worst <= 1e-9, f"max deviation {worst:.2e}"


def criterion_12():
    t = time.perf_counter()
    cfg = ExperimentConfig("approx-path", graph=("er:200:4",), mu=(2.0, 10.0), sigma2=1.0,
                           trials=100, seed=12)
    rows = run_trials(cfg)
    by_mu = {mu: [r["ratio"] for r in rows if r["mu"] == mu] for mu in (2.0, 10.0)}
    m2, m10 = (float(np.mean(by_mu[m])) for m in (2.0, 10.0))
    every = all(r["d"] <= r["d0"] for r in rows)
    dt = time.perf_counter() - t
    ok = m10 > m2 and every and dt <= 600 and all(len(v) >= 100 for v in by_mu.values())
    return ok, f"mean ratio mu=2: {m2:.4f}, mu=10: {m10:.4f}, d<=d0 in all {len(rows)} trials: {every}, {dt:.0f} s"


def criterion_13():
    t = time.perf_counter()
    cfg = ExperimentConfig("source-snapshot", graph=("er:200:4",), trials=200, seed=13,
                           infected_frac=(0.2, 0.3), q=0.2)
    rows = run_trials(cfg)
    hb = np.array([r["top_q"] for r in rows if r["method"] == "bfs"], float)
    hg = np.array([r["top_q"] for r in rows if r["method"] == "gromov"], float)
    corners = all(r["corners_ok"] for r in rows if r["method"] == "gromov")
    se = float(np.std(hg - hb, ddof=1) / math.sqrt(len(hb))) if len(hb) > 1 else 0.0
    dt = time.perf_counter() - t
    ok = hg.mean() >= hb.mean() - 2 * se and corners and dt <= 900 and len(hb) >= 200
    return ok, (f"20%-accuracy bfs {hb.mean():.3f}, gromov {hg.mean():.3f}, paired SE {se:.3f}, "
                f"corners in every trial: {corners}, {dt:.0f} s")


def _independent_cost(graph, demand, centers):
    g = graph.to_networkx()
    dist = nx.multi_source_dijkstra_path_length(g, set(centers))
    return math.fsum(demand[x] * dist[x] for x in graph.nodes)


def criterion_14():
    g = generate_graph(Grid2D(6, 6), 0)
    c1, c2 = [], []
    mismatch = nonmono = 0
    for trial in range(50):
        rng = np.random.default_rng([14, trial])
        demand = pareto_demand(g, rng)
        prob = PlacementProblem(g, demand, 2)
        gr = place_greedy(prob)
        gm = place_gromov(prob, rng)
        mismatch += gm.cost != _independent_cost(g, demand, gm.centers)
        nonmono += any(b > a for a, b in zip(gr.step_costs, gr.step_costs[1:]))
        c1.append(gr.cost)
        c2.append(gm.cost)
    r = mean_cost_ratio(c1, c2)
    ok = mismatch == 0 and nonmono == 0 and r is not None
    return ok, f"50 trials, cost mismatches {mismatch}, non-monotone greedy runs {nonmono}, mean r_c {r:.4f}"


CRITERIA = [globals()[f"criterion_{k}"] for k in range(1, 15)]


def _record(k):
    ok, detail = CRITERIA[k - 1]()
    RESULTS[k] = (ok, detail)
    return ok, detail


@pytest.mark.parametrize(
    "k", [pytest.param(k, marks=pytest.mark.slow) if k in (12, 13) else k for k in range(1, 15)]
)
def test_acceptance(k):
    ok, detail = _record(k)
    assert ok, f"criterion {k}: {detail}"


def summary_lines():
    return [f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}" for k, (ok, detail) in sorted(RESULTS.items())]


if __name__ == "__main__":
    failed = 0
    for k in range(1, 15):
        ok, detail = _record(k)
        failed += not ok
        print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(1 if failed else 0)
