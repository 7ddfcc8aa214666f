import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gromov.combination import g_convex, gromovize
from gromov.graphs import BA, ER, Grid2D, WeightedGraph, bfs_tree, generate_graph
from gromov.inference import (
    BfsHeuristic,
    EstimatorProblem,
    Gromov,
    PlacementProblem,
    SnapshotOutcome,
    centroid_score,
    centroid_scores,
    eval_metrics,
    family_placement_costs,
    mean_cost_ratio,
    on_propagation_path_probability,
    order_accuracy,
    pareto_demand,
    path_probability_matrix,
    place_greedy,
    place_gromov,
    placement_cost,
    q_accuracy,
    simulate_snapshot,
    source_estimate_snapshot,
    synthesize_pairwise,
)
from gromov.matrix import on_path_from_base, reconstruct_tree
from gromov.tree import Base, UnknownNodeError, WeightedTree, gromov_matrix, restrict_to_span

from _gen import random_base


def path_graph(n, w=1.0):
    names = tuple(f"n{i}" for i in range(n))
    return WeightedGraph(names, tuple((names[i], names[i + 1], w) for i in range(n - 1)))


# ------------------------------------------------------------ acquisition order

def test_collinear_samples_give_one():
    t = WeightedTree.from_edges([("s", "u", 1), ("u", "v", 2)])
    b = Base(t, "s", ("u", "v"))
    assert on_propagation_path_probability([b, b, b], "s", "u", "v") == 1.0


def test_star_samples_give_zero():
    t = WeightedTree.from_edges([("s", "u", 1), ("s", "v", 2), ("s", "w", 1)])
    b = Base(t, "s", ("u", "v", "w"))
    assert on_propagation_path_probability([b, b], "s", "u", "v") == 0.0


def test_probability_errors():
    t = WeightedTree.from_edges([("s", "u", 1), ("u", "v", 2)])
    b = Base(t, "s", ("u", "v"))
    with pytest.raises(ValueError):
        on_propagation_path_probability([], "s", "u", "v")
    with pytest.raises(UnknownNodeError):
        on_propagation_path_probability([b], "s", "u", "x")
    with pytest.raises(ValueError):
        on_propagation_path_probability([b], "r", "u", "v")


def six_node_samples():
    trees = [
        [("s", "a", 1), ("a", "b", 1), ("b", "c", 1), ("a", "d", 1), ("d", "e", 1)],
        [("s", "b", 1), ("b", "a", 1), ("a", "d", 1), ("b", "c", 1), ("c", "e", 1)],
        [("s", "a", 1), ("s", "c", 1), ("c", "b", 1), ("a", "d", 1), ("d", "e", 1)],
    ]
    return [Base(WeightedTree.from_edges(e), "s", ("a", "b", "c", "d", "e")) for e in trees]


def test_three_samples_match_hand_enumeration():
    samples = six_node_samples()
    mats = [gromov_matrix(b) for b in samples]
    family = []
    for x, y in itertools.combinations(range(3), 2):
        for k in range(11):
            family.append(np.asarray(g_convex([mats[x], mats[y]], (k / 10, 1 - k / 10))))
    assert len(family) == 33
    labels = samples[0].base_set
    for u, v in itertools.permutations(range(5), 2):
        expect = np.mean([on_path_from_base(m, u, v) for m in family])
        got = on_propagation_path_probability(samples, "s", labels[u], labels[v])
        assert got == pytest.approx(expect, abs=1e-12)


def test_probability_ignores_internal_labels_and_base_order():
    samples = six_node_samples()
    renamed = [Base(b.tree.relabel({"s": "s"}), "s", b.base_set[::-1]) for b in samples]
    for u, v in itertools.permutations("abcde", 2):
        assert on_propagation_path_probability(samples, "s", u, v) == on_propagation_path_probability(
            renamed, "s", u, v)


def test_single_sample_family_is_itself():
    m = gromov_matrix(six_node_samples()[0])
    assert synthesize_pairwise([m]).shape == (1, 5, 5)
    assert synthesize_pairwise([m, m, m]).shape == (33, 5, 5)
    p = path_probability_matrix(m)
    assert p[0, 1] == 1.0 and p[1, 0] == 0.0


def test_order_accuracy_examples():
    assert order_accuracy([0.3, 0.7], [0.3, 0.7]) == 1.0
    assert order_accuracy([0.25], [0.5]) == pytest.approx(0.5)
    assert order_accuracy([0.8], [0.8]) == 1.0
    with pytest.warns(RuntimeWarning):
        assert order_accuracy([0.5, 0.25], [1.0, 0.5]) == pytest.approx(0.5)
    with pytest.warns(RuntimeWarning):
        assert math.isnan(order_accuracy([0.5], [0.0]))


# ---------------------------------------------------------------- centroid

def test_centroid_examples():
    star = WeightedTree.from_edges([("s", "a", 1), ("s", "b", 2), ("s", "c", 3)])
    assert centroid_score(star, "s") == 0
    # the edge s-b leaves with s, so the {b, c} component weighs 1
    path = WeightedTree.from_edges([("a", "s", 2), ("s", "b", 3), ("b", "c", 1)])
    assert centroid_score(path, "s") == 1
    leafy = WeightedTree.from_edges([("s", "a", 2), ("a", "b", 3), ("b", "c", 4)])
    assert centroid_score(leafy, "s") == 9 - 2


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**9), st.integers(2, 16))
def test_matrix_centroid_matches_tree(seed, n_nodes):
    rng = np.random.default_rng(seed)
    base = random_base(rng, n_nodes, int(rng.integers(1, n_nodes)))
    canon = restrict_to_span(base.tree, base.base_vertex, base.base_set)
    expect = centroid_score(canon.tree, base.base_vertex)
    assert centroid_scores(gromov_matrix(base)) == pytest.approx(expect, abs=1e-9)
    assert (expect == 0) == all(canon.tree.degree(x) == 0 or x == base.base_vertex
                                or canon.tree.neighbors(x).keys() == {base.base_vertex}
                                for x in canon.tree.nodes)


def test_matrix_centroid_on_combinations():
    rng = np.random.default_rng(4)
    g = generate_graph(Grid2D(5, 5), 0)
    V = [x for x in g.nodes if x != "2,2"]
    m1 = gromov_matrix(Base(bfs_tree(g, "2,2", "natural"), "2,2", V))
    m2 = gromov_matrix(Base(bfs_tree(g, "2,2", rng), "2,2", V))
    checked = 0
    for th in np.linspace(0, 1, 11):
        m = np.asarray(g_convex([m1, m2], (th, 1 - th)))
        try:
            base = reconstruct_tree(m)
        except ValueError:
            continue
        checked += 1
        assert centroid_scores(m) == pytest.approx(centroid_score(base.tree, "s"), abs=1e-9)
    assert checked >= 2


# ------------------------------------------------------------- snapshot

def test_single_infected_is_ranked_first():
    g = generate_graph(Grid2D(4, 4), 0)
    for method in (BfsHeuristic(0), Gromov(0.1)):
        est = source_estimate_snapshot(g, ["1,1"], method)
        assert est.estimate == "1,1"


def test_missing_infected_node():
    g = generate_graph(Grid2D(3, 3), 0)
    with pytest.raises(UnknownNodeError):
        source_estimate_snapshot(g, ["9,9"], Gromov())
    with pytest.raises(ValueError):
        source_estimate_snapshot(g, [], Gromov())


def test_path_segment_family_contains_propagation_tree():
    g = path_graph(9)
    infected = ["n3", "n4", "n5", "n6"]
    src = "n4"
    V = [x for x in infected if x != src]
    truth = gromov_matrix(restrict_to_span(
        WeightedTree.from_edges([(u, v, w) for u, v, w in g.edges]), src, V))
    t1 = bfs_tree(g, src, "natural")
    assert np.array_equal(gromov_matrix(restrict_to_span(t1, src, V)), truth)
    est = source_estimate_snapshot(g, infected, Gromov(0.1))
    assert est.corners_ok
    # on a path every tree is the path, so both estimators agree
    bfs = source_estimate_snapshot(g, infected, BfsHeuristic(3))
    assert [x for x, _ in est.ranking] == [x for x, _ in bfs.ranking]


def test_snapshot_directions_and_candidates():
    g = generate_graph(BA(60, 2), 1)
    src, infected = simulate_snapshot(g, 2)
    assert src in infected
    hi = source_estimate_snapshot(g, infected, Gromov(0.25), direction="max")
    lo = source_estimate_snapshot(g, infected, Gromov(0.25), direction="min")
    assert hi.ranking[0][1] >= hi.ranking[-1][1]
    assert lo.ranking[0][1] <= lo.ranking[-1][1]
    everyone = source_estimate_snapshot(g, infected, BfsHeuristic(0), candidates="all")
    assert everyone.candidates == len(g.nodes)
    with pytest.raises(ValueError):
        source_estimate_snapshot(g, infected, Gromov(), direction="up")


def test_gromov_score_dominates_pure_corners():
    g = generate_graph(ER(80, 4, largest_component=True), 5)
    _, infected = simulate_snapshot(g, 6)
    est = source_estimate_snapshot(g, infected, Gromov(0.1))
    assert est.corners_ok
    for s, score in est.ranking[:10]:
        V = [x for x in infected if x != s]
        t1 = restrict_to_span(bfs_tree(g, s, "natural"), s, V).tree
        t2 = restrict_to_span(bfs_tree(g, s, "reversed"), s, V).tree
        assert score >= max(centroid_score(t1, s), centroid_score(t2, s)) - 1e-9


def test_simulate_snapshot_fraction():
    g = generate_graph(Grid2D(10, 10), 0)
    src, inf = simulate_snapshot(g, 1, (0.2, 0.3))
    assert 20 <= len(inf) <= 30 and inf[0] == src
    g.induced(inf)
    with pytest.raises(ValueError):
        simulate_snapshot(g, 1, (0.0, 0.3))


# ------------------------------------------------------------ placement

def test_placement_cost_examples():
    g = WeightedGraph(("a", "b", "c"), (("a", "b", 1), ("b", "c", 1)))
    w = {"a": 1, "b": 1, "c": 1}
    assert placement_cost(g, w, ["b"]) == 2
    assert placement_cost(g, w, g.nodes) == 0
    assert placement_cost(g, {k: 3 * v for k, v in w.items()}, ["a"]) == 3 * placement_cost(g, w, ["a"])
    with pytest.raises(ValueError):
        placement_cost(g, w, [])


def test_family_costs_match_tree_distances():
    rng = np.random.default_rng(2)
    base = random_base(rng, 12, 11)
    m = gromov_matrix(base)
    w = rng.uniform(0, 2, 11)
    wr = 0.7
    costs = family_placement_costs(m[None], w, wr)[0]
    from gromov.tree import tree_distance
    names = [base.base_vertex] + list(base.base_set)
    weights = [wr] + list(w)
    for c, s in enumerate(names):
        expect = sum(wi * tree_distance(base.tree, s, v) for wi, v in zip(weights, names))
        assert costs[c] == pytest.approx(expect, abs=1e-9)


def test_greedy_examples():
    g = path_graph(7)
    unit = {x: 1.0 for x in g.nodes}
    assert place_greedy(PlacementProblem(g, unit, 1)).centers == ("n3",)
    full = place_greedy(PlacementProblem(g, unit, 7))
    assert full.cost == 0 and set(full.centers) == set(g.nodes)
    with pytest.raises(ValueError):
        PlacementProblem(g, unit, 8)
    with pytest.raises(ValueError):
        PlacementProblem(g, {**unit, "n0": -1}, 1)


def test_greedy_against_exhaustive():
    rng = np.random.default_rng(0)
    g = generate_graph(BA(8, 2), 3)
    for trial in range(5):
        d = pareto_demand(g, trial)
        res = place_greedy(PlacementProblem(g, d, 2))
        best = min(placement_cost(g, d, S) for S in itertools.combinations(g.nodes, 2))
        assert res.cost >= best - 1e-12
        assert all(a >= b for a, b in zip(res.step_costs, res.step_costs[1:]))


def test_gromov_placement_path():
    g = path_graph(9)
    unit = {x: 1.0 for x in g.nodes}
    res = place_gromov(PlacementProblem(g, unit, 1), seed=0)
    assert res.centers == ("n4",)
    assert res.converged and res.cost == placement_cost(g, unit, res.centers)


def test_gromov_placement_large_eta_stops_after_one_round():
    g = generate_graph(Grid2D(6, 6), 0)
    d = pareto_demand(g, 1)
    res = place_gromov(PlacementProblem(g, d, 2, eta=1e9), seed=1)
    assert res.iterations == 1 and res.converged


def test_gromov_placement_reports_true_cost():
    g = generate_graph(Grid2D(6, 6), 0)
    for seed in range(5):
        d = pareto_demand(g, seed)
        res = place_gromov(PlacementProblem(g, d, 2), seed=seed, max_iter=50)
        assert res.cost == placement_cost(g, d, res.centers)
        assert len(set(res.centers)) == 2
        assert res.iterations <= 50


def test_pareto_demand():
    g = generate_graph(Grid2D(10, 10), 0)
    d = pareto_demand(g, 0)
    assert min(d.values()) >= 1.0
    assert d == pareto_demand(g, 0)


# ---------------------------------------------------------------- metrics

def outcome(rank, dist, n=10):
    return SnapshotOutcome("a", "b", dist, rank, n)


def test_metrics_examples():
    same = [outcome(1, 2.0), outcome(5, 3.0)]
    rep = eval_metrics(same, same)
    assert rep.error_reduction == 0 and rep.detection_improvement == 0
    rep = eval_metrics([outcome(0, 5.0)], [outcome(0, 4.0)])
    assert rep.error_reduction == pytest.approx(0.2)
    perfect = eval_metrics([outcome(5, 1.0)], [outcome(0, 0.0)])
    assert perfect.d_gromov == 0 and perfect.acc_gromov == 1
    assert perfect.detection_improvement is None
    zero = eval_metrics([outcome(0, 0.0)], [outcome(0, 0.0)])
    assert zero.error_reduction is None
    assert q_accuracy([outcome(1, 0), outcome(2, 0)], 0.2) == 0.5
    assert mean_cost_ratio([2, 3], [1, 3]) == 1.5
    assert mean_cost_ratio([1], [0]) is None
    with pytest.raises(ValueError):
        eval_metrics([outcome(0, 0)], [])


def test_estimator_problem_mode():
    EstimatorProblem(None, "spans U", "centroid", "minimization")
    with pytest.raises(ValueError):
        EstimatorProblem(None, "spans U", "centroid", "sum")
