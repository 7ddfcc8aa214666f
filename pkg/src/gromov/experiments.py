"""
Reproducible simulation drivers.

An experiment is a list of independent work units (graph spec x sweep value x
trial).  Every unit draws from its own random stream derived from the master
seed and its position, so results do not depend on how units are scheduled.

Output files
------------
``trials.csv``
    one row per unit (per unit and method for ``source-snapshot``)
``summary.csv``
    means per sweep value, plus an ``all`` row
``plotdata.csv``
    long format ``x_name, x, metric, y`` for external plotting
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .combination import g_convex_family, simplex_grid
from .graphs import (
    BA,
    ER,
    Complete,
    Exponential,
    Grid2D,
    TruncatedGaussian,
    WeightedGraph,
    bfs_tree,
    generate_graph,
    read_graph,
    sample_delays,
    shortest_path_tree,
)
from .inference import (
    BfsHeuristic,
    Gromov,
    PlacementProblem,
    SnapshotOutcome,
    order_accuracy,
    pareto_demand,
    path_probability_matrix,
    place_greedy,
    place_gromov,
    placement_cost,
    simulate_snapshot,
    source_estimate_snapshot,
    synthesize_pairwise,
)
from .tree import Base, gromov_matrix

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ApproxPathResult",
    "parse_config",
    "load_config",
    "parse_graph_spec",
    "parse_delay_spec",
    "run_approx_path",
    "run_acq_order",
    "run_source_snapshot",
    "run_placement",
    "run_trials",
    "run_experiment",
]

KINDS = ("approx-path", "acq-order", "source-snapshot", "placement")

DEFAULT_GRAPH = {
    "approx-path": "er:200:4",
    "acq-order": "grid:6:6",
    "source-snapshot": "er:200:4",
    "placement": "grid:6:6",
}


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"config field '{key}': {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    graph: tuple = ()
    delay: str = "exp:1"
    mu: tuple = (2.0, 10.0)
    sigma2: float = 1.0
    trials: int = 10
    seed: int = 0
    grid_step: float = 0.1
    samples: int = 200
    gromov_samples: int = 3
    infected_frac: tuple = (0.2, 0.3)
    candidates: str = "infected"
    direction: str = "max"
    q: float = 0.2
    k: int = 2
    eta: float = 1e-9
    max_iter: int = 100
    largest_component: bool = True
    unit_weights: bool = False

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ConfigError("experiment", f"must be one of {', '.join(KINDS)}")
        if not self.graph:
            object.__setattr__(self, "graph", (DEFAULT_GRAPH[self.experiment],))
        for spec in self.graph:
            parse_graph_spec(spec, check_only=True)
        parse_delay_spec(self.delay)
        if self.trials < 1:
            raise ConfigError("trials", "must be at least 1")
        if not 0 < self.grid_step <= 1 or abs(round(1 / self.grid_step) * self.grid_step - 1) > 1e-9:
            raise ConfigError("grid_step", "must divide 1")
        if self.samples < 1:
            raise ConfigError("samples", "must be at least 1")
        if self.gromov_samples < 1:
            raise ConfigError("gromov_samples", "must be at least 1")
        lo, hi = self.infected_frac
        if not 0 < lo <= hi <= 1:
            raise ConfigError("infected_frac", "must satisfy 0 < lo <= hi <= 1")
        if self.candidates not in ("infected", "all"):
            raise ConfigError("candidates", "must be 'infected' or 'all'")
        if self.direction not in ("max", "min"):
            raise ConfigError("direction", "must be 'max' or 'min'")
        if not 0 < self.q <= 1:
            raise ConfigError("q", "must lie in (0, 1]")
        if self.k < 1:
            raise ConfigError("k", "must be at least 1")
        if not self.eta > 0:
            raise ConfigError("eta", "must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter", "must be at least 1")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2", "must be positive")
        if any(not m > 0 for m in self.mu):
            raise ConfigError("mu", "means must be positive")


@dataclass(frozen=True)
class ApproxPathResult:
    d0: float
    d: float
    ratio: float


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _specs(text):
    return tuple(x.strip() for x in text.split(";") if x.strip())


_CONVERT = {
    "experiment": str.strip,
    "graph": _specs,
    "delay": str.strip,
    "mu": _floats,
    "sigma2": float,
    "trials": int,
    "seed": int,
    "grid_step": float,
    "samples": int,
    "gromov_samples": int,
    "infected_frac": _floats,
    "candidates": str.strip,
    "direction": str.strip,
    "q": float,
    "k": int,
    "eta": float,
    "max_iter": int,
    "largest_component": _bool,
    "unit_weights": _bool,
}


def _convert(key, value):
    key = key.strip().replace("-", "_")
    if key not in _CONVERT:
        raise ConfigError(key, "unknown field")
    try:
        out = _CONVERT[key](value)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    if key == "infected_frac":
        if len(out) == 1:
            out = (out[0], out[0])
        if len(out) != 2:
            raise ConfigError(key, "expected one value or a 'lo,hi' pair")
    return key, out


def parse_config(text: str, overrides: Optional[dict] = None, env=None) -> ExperimentConfig:
    """
    ``key = value`` lines (``#`` comments) plus overrides; ``GROMOV_SEED`` in
    ``env`` replaces the default seed but not an explicit one.
    """
    env = os.environ if env is None else env
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {n} is not 'key = value'")
        k, v = line.split("=", 1)
        key, val = _convert(k, v)
        values[key] = val
    for k, v in (overrides or {}).items():
        key, val = _convert(k, v)
        values[key] = val
    if "seed" not in values and env.get("GROMOV_SEED"):
        try:
            values["seed"] = int(env["GROMOV_SEED"])
        except ValueError:
            raise ConfigError("seed", "GROMOV_SEED is not an integer") from None
    if "experiment" not in values:
        raise ConfigError("experiment", "missing")
    return ExperimentConfig(**values)


def load_config(path, overrides: Optional[dict] = None, env=None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("path", f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, overrides, env)


def parse_graph_spec(spec: str, check_only: bool = False):
    """``er:n:deg``, ``ba:n:m``, ``grid:rows:cols``, ``complete:n`` or ``file:path``."""
    kind, _, rest = spec.partition(":")
    kind = kind.lower()
    args = rest.split(":") if rest else []
    try:
        if kind == "er" and len(args) == 2:
            return ER(int(args[0]), float(args[1]))
        if kind == "ba" and len(args) == 2:
            return BA(int(args[0]), int(args[1]))
        if kind == "grid" and len(args) == 2:
            return Grid2D(int(args[0]), int(args[1]))
        if kind == "complete" and len(args) == 1:
            return Complete(int(args[0]))
    except ValueError:
        raise ConfigError("graph", f"bad numbers in {spec!r}") from None
    if kind == "file" and rest:
        if not Path(rest).is_file():
            raise ConfigError("graph", f"no such file {rest}")
        return Path(rest)
    raise ConfigError("graph", f"cannot parse graph spec {spec!r}")


def parse_delay_spec(spec: str):
    """``exp:rate`` or ``tgauss:mean:variance``."""
    kind, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    try:
        if kind == "exp" and len(args) == 1:
            return Exponential(float(args[0]))
        if kind == "tgauss" and len(args) == 2:
            return TruncatedGaussian(float(args[0]), float(args[1]))
    except ValueError as exc:
        raise ConfigError("delay", str(exc)) from None
    raise ConfigError("delay", f"cannot parse delay spec {spec!r}")


# --------------------------------------------------------------------------
# units
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Unit:
    index: int
    graph: str
    x: float
    trial: int


def _units(cfg: ExperimentConfig):
    sweep = cfg.mu if cfg.experiment == "approx-path" else (float("nan"),)
    out = []
    for g in cfg.graph:
        for x in sweep:
            for t in range(cfg.trials):
                out.append(Unit(len(out), g, x, t))
    return out


def _rng(cfg, unit) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(unit.index,)))


def _graph(cfg, unit, rng) -> WeightedGraph:
    kind = parse_graph_spec(unit.graph)
    if isinstance(kind, Path):
        return read_graph(kind, cfg.unit_weights)
    if isinstance(kind, ER) and cfg.largest_component:
        kind = replace(kind, largest_component=True)
    return generate_graph(kind, rng)


def _random_node(graph, rng):
    return graph.nodes[int(rng.integers(len(graph.nodes)))]


def _spectral_norm(batch: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvalsh(batch)
    return np.abs(ev).max(axis=-1)


def approx_path_trial(graph, mu, sigma2, step, rng) -> ApproxPathResult:
    """Distance from a random BFS matrix and from the best G-convex combination."""
    v = _random_node(graph, rng)
    V = [x for x in graph.nodes if x != v]
    delays = sample_delays(graph, TruncatedGaussian(mu, sigma2), rng)
    target = gromov_matrix(Base(shortest_path_tree(graph, v, delays), v, V))
    m0 = gromov_matrix(Base(bfs_tree(graph, v, rng), v, V))
    m1 = gromov_matrix(Base(bfs_tree(graph, v, rng), v, V))
    d_mat = np.diag(np.diag(m1))
    grid = simplex_grid(2, step)
    d0 = float(_spectral_norm(target - m0))
    best = math.inf
    for m_alpha in g_convex_family([m0, m1], grid):
        fam = g_convex_family([m_alpha, d_mat], grid)
        best = min(best, float(_spectral_norm(target[None] - fam).min()))
    if best == 0.0:
        ratio = 0.0 if d0 == 0.0 else math.inf
    else:
        ratio = (d0 - best) / best
    return ApproxPathResult(d0, best, ratio)


def _approx_unit(cfg, unit):
    rng = _rng(cfg, unit)
    g = _graph(cfg, unit, rng)
    r = approx_path_trial(g, unit.x, cfg.sigma2, cfg.grid_step, rng)
    return [{
        "trial": unit.trial, "graph": unit.graph, "nodes": len(g.nodes), "mu": unit.x,
        "d0": r.d0, "d": r.d, "ratio": r.ratio, "d_le_d0": int(r.d <= r.d0),
    }]


def acq_order_trial(graph, model, samples, gromov_samples, step, rng):
    """Accuracy of the pairwise G-convex estimate against many sampled trees."""
    s = _random_node(graph, rng)
    V = [x for x in graph.nodes if x != s]

    def sample():
        delays = sample_delays(graph, model, rng)
        return gromov_matrix(Base(shortest_path_tree(graph, s, delays), s, V))

    truth = path_probability_matrix(np.stack([sample() for _ in range(samples)]))
    seeds = [sample() for _ in range(gromov_samples)]
    est = path_probability_matrix(synthesize_pairwise(seeds, step))
    off = ~np.eye(len(V), dtype=bool)
    p, q = truth[off], est[off]
    kept = int(((p > 0) & (p < 1)).sum())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        acc = order_accuracy(q, p)
    return s, acc, kept, int(p.size)


def _acq_unit(cfg, unit):
    rng = _rng(cfg, unit)
    g = _graph(cfg, unit, rng)
    s, acc, kept, total = acq_order_trial(
        g, parse_delay_spec(cfg.delay), cfg.samples, cfg.gromov_samples, cfg.grid_step, rng
    )
    return [{
        "trial": unit.trial, "graph": unit.graph, "nodes": len(g.nodes), "source": s,
        "accuracy": acc, "triples": kept, "excluded": total - kept,
    }]


def _snapshot_unit(cfg, unit):
    rng = _rng(cfg, unit)
    g = _graph(cfg, unit, rng)
    source, infected = simulate_snapshot(g, rng, cfg.infected_frac)
    D = g.distances
    rows = []
    for name, method in (("bfs", BfsHeuristic(rng)), ("gromov", Gromov(cfg.grid_step))):
        est = source_estimate_snapshot(g, infected, method, cfg.candidates, cfg.direction)
        rank = est.rank_of(source) if source in dict(est.ranking) else est.candidates
        o = SnapshotOutcome(source, est.estimate,
                            float(D[g.index[source], g.index[est.estimate]]), rank, est.candidates)
        rows.append({
            "trial": unit.trial, "graph": unit.graph, "nodes": len(g.nodes), "method": name,
            "source": source, "estimate": o.estimate, "infected": len(infected),
            "candidates": o.candidates, "error_distance": o.error_distance, "rank": o.rank,
            "rank_percentile": o.rank_percentile,
            "top_q": int(o.rank < math.ceil(cfg.q * o.candidates)),
            "corners_ok": int(est.corners_ok),
        })
    return rows


def _placement_unit(cfg, unit):
    rng = _rng(cfg, unit)
    g = _graph(cfg, unit, rng)
    demand = pareto_demand(g, rng)
    prob = PlacementProblem(g, demand, cfg.k, cfg.eta)
    greedy = place_greedy(prob)
    gromov = place_gromov(prob, rng, cfg.grid_step, cfg.max_iter)
    steps = greedy.step_costs
    return [{
        "trial": unit.trial, "graph": unit.graph, "nodes": len(g.nodes), "k": cfg.k,
        "c1": greedy.cost, "c2": gromov.cost,
        "r_c": greedy.cost / gromov.cost if gromov.cost else None,
        "iterations": gromov.iterations, "converged": int(gromov.converged),
        "cost_matches": int(placement_cost(g, demand, gromov.centers) == gromov.cost),
        "greedy_monotone": int(all(a >= b for a, b in zip(steps, steps[1:]))),
        "greedy_centers": " ".join(greedy.centers), "gromov_centers": " ".join(gromov.centers),
    }]


_RUNNERS = {
    "approx-path": _approx_unit,
    "acq-order": _acq_unit,
    "source-snapshot": _snapshot_unit,
    "placement": _placement_unit,
}


def _run_unit(args):
    cfg, unit = args
    return _RUNNERS[cfg.experiment](cfg, unit)


def run_trials(cfg: ExperimentConfig, jobs: int = 1) -> list:
    """All trial rows in unit order, whatever the worker count."""
    units = _units(cfg)
    work = [(cfg, u) for u in units]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_run_unit, work))
    else:
        chunks = [_run_unit(w) for w in work]
    return [row for chunk in chunks for row in chunk]


def run_approx_path(cfg: ExperimentConfig, jobs: int = 1):
    return _check_kind(cfg, "approx-path", jobs)


def run_acq_order(cfg: ExperimentConfig, jobs: int = 1):
    return _check_kind(cfg, "acq-order", jobs)


def run_source_snapshot(cfg: ExperimentConfig, jobs: int = 1):
    return _check_kind(cfg, "source-snapshot", jobs)


def run_placement(cfg: ExperimentConfig, jobs: int = 1):
    return _check_kind(cfg, "placement", jobs)


def _check_kind(cfg, kind, jobs):
    if cfg.experiment != kind:
        raise ConfigError("experiment", f"expected {kind}, got {cfg.experiment}")
    rows = run_trials(cfg, jobs)
    return rows, summarize(cfg, rows)


# --------------------------------------------------------------------------
# summaries and files
# --------------------------------------------------------------------------

_METRICS = {
    "approx-path": ("mu", ["d0", "d", "ratio"]),
    "acq-order": ("nodes", ["accuracy"]),
    "placement": ("nodes", ["c1", "c2", "r_c", "iterations"]),
}


def _mean(vals):
    vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else None


def _stderr(vals):
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    if len(vals) < 2:
        return None
    return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def summarize(cfg: ExperimentConfig, rows: list) -> list:
    """One summary row per sweep value plus an ``all`` row."""
    if cfg.experiment == "source-snapshot":
        return _summarize_snapshot(cfg, rows)
    xname, metrics = _METRICS[cfg.experiment]
    groups = {}
    for r in rows:
        groups.setdefault(r[xname], []).append(r)
    out = []
    for key, grp in list(groups.items()) + [("all", rows)]:
        s = {xname: key, "trials": len(grp)}
        for m in metrics:
            vals = [r[m] for r in grp]
            s[f"mean_{m}"] = _mean(vals)
            s[f"se_{m}"] = _stderr(vals)
        if cfg.experiment == "approx-path":
            s["all_d_le_d0"] = int(all(r["d_le_d0"] for r in grp))
        if cfg.experiment == "placement":
            s["all_cost_matches"] = int(all(r["cost_matches"] for r in grp))
            s["all_greedy_monotone"] = int(all(r["greedy_monotone"] for r in grp))
        out.append(s)
    return out


def _summarize_snapshot(cfg, rows):
    from .inference import eval_metrics

    def outcomes(grp, method):
        return [
            SnapshotOutcome(r["source"], r["estimate"], r["error_distance"], r["rank"], r["candidates"])
            for r in grp if r["method"] == method
        ]

    groups = {}
    for r in rows:
        groups.setdefault(r["nodes"], []).append(r)
    out = []
    for key, grp in list(groups.items()) + [("all", rows)]:
        b, g = outcomes(grp, "bfs"), outcomes(grp, "gromov")
        rep = eval_metrics(b, g, cfg.q)
        hits_b = [float(o.rank < math.ceil(cfg.q * o.candidates)) for o in b]
        hits_g = [float(o.rank < math.ceil(cfg.q * o.candidates)) for o in g]
        out.append({
            "nodes": key, "trials": rep.trials, "q": cfg.q,
            "mean_d_bfs": rep.d_bfs, "mean_d_gromov": rep.d_gromov,
            "error_reduction": rep.error_reduction,
            "acc_bfs": rep.acc_bfs, "se_acc_bfs": _stderr(hits_b),
            "acc_gromov": rep.acc_gromov, "se_acc_gromov": _stderr(hits_g),
            "detection_improvement": rep.detection_improvement,
            "all_corners_ok": int(all(r["corners_ok"] for r in grp if r["method"] == "gromov")),
        })
    return out


def _plotdata(cfg, summary):
    xname = "mu" if cfg.experiment == "approx-path" else "nodes"
    out = []
    for s in summary:
        if s[xname] == "all":
            continue
        for k, v in s.items():
            if k in (xname, "trials") or k.startswith("se_") or k.startswith("all_"):
                continue
            out.append({"x_name": xname, "x": s[xname], "metric": k, "y": v})
    return out


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows: list) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, outdir, jobs: int = 1) -> dict:
    """Run every unit and write ``trials.csv``, ``summary.csv`` and ``plotdata.csv``."""
    rows = run_trials(cfg, jobs)
    summary = summarize(cfg, rows)
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, data in (("trials", rows), ("summary", summary), ("plotdata", _plotdata(cfg, summary))):
            p = out / f"{name}.csv"
            p.write_text(to_csv(data), encoding="utf-8")
            paths[name] = p
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc.strerror}") from exc
    return {"rows": rows, "summary": summary, "paths": paths}
