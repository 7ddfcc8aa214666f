"""
Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 usage or input error.
Indices in messages are 1-based.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import matrix as mx
from .combination import convex, g_convex, parse_weights, trace_path
from .experiments import ConfigError, load_config, run_experiment
from .tree import format_base, parse_base

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_matrix(path) -> np.ndarray:
    try:
        return mx.parse_matrix(_read(path))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _looks_like_base(text: str) -> bool:
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            return line == "tree"
    return False


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _matrix_text(m, fmt):
    return mx.format_matrix_json(m) if fmt == "json" else mx.format_matrix_csv(m)


def cmd_validate(args):
    m = _load_matrix(args.matrix)
    try:
        v = mx.validate(m)
    except mx.StructuralError as exc:
        print(f"invalid: {exc}")
        return EXIT_INVALID
    if v is None:
        print(f"valid Gromov matrix (n={m.shape[0]})")
        return EXIT_OK
    print(f"invalid: {v}")
    return EXIT_INVALID


def cmd_build(args):
    text = _read(args.source)
    try:
        if _looks_like_base(text):
            from .tree import gromov_matrix
            m = gromov_matrix(parse_base(text))
        else:
            m = mx.apply_program(mx.parse_program(text))
    except mx.ProgramError as exc:
        raise UsageError(f"{args.source}: {exc}") from None
    except (ValueError, LookupError) as exc:
        raise UsageError(f"{args.source}: {exc}") from None
    _emit(_matrix_text(m, args.format), args.output)
    return EXIT_OK


def cmd_reconstruct(args):
    m = _load_matrix(args.matrix)
    v = mx.validate(m) if m.ndim == 2 and m.shape[0] == m.shape[1] else None
    try:
        if v is not None:
            print(f"invalid: {v}", file=sys.stderr)
            return EXIT_INVALID
        labels = args.labels.split(",") if args.labels else None
        base = mx.reconstruct_tree(m, labels, args.base_vertex)
    except mx.StructuralError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.program:
        _emit(mx.format_program(mx.decompose(base)), args.output)
    else:
        _emit(format_base(base), args.output)
    return EXIT_OK


def cmd_combine(args):
    mats = [_load_matrix(p) for p in args.matrices]
    try:
        w = parse_weights(args.weights)
        if len(w) != len(mats):
            raise ValueError(f"{len(w)} weights for {len(mats)} matrices")
        m = convex(mats, w) if args.mode == "convex" else g_convex(mats, w)
    except ValueError as exc:
        raise UsageError(f"--weights: {exc}") from None
    _emit(_matrix_text(m, args.format), args.output)
    return EXIT_OK


def cmd_bound(args):
    text = _read(args.source)
    try:
        if _looks_like_base(text):
            prog = mx.decompose(parse_base(text))
        else:
            prog = mx.parse_program(text)
        b = mx.lambda_min_bound(prog)
    except (ValueError, LookupError) as exc:
        raise UsageError(f"{args.source}: {exc}") from None
    print(mx._fmt(b))
    return EXIT_OK


def cmd_eigmin(args):
    m = _load_matrix(args.matrix)
    try:
        mx._square(m)
    except mx.StructuralError as exc:
        print(f"invalid: {exc}")
        return EXIT_INVALID
    print(mx._fmt(mx.lambda_min(m)))
    return EXIT_OK


def cmd_gv(args):
    m = _load_matrix(args.matrix)
    v = mx.validate(m) if m.ndim == 2 and m.shape[0] == m.shape[1] else "not square"
    if v is not None:
        print(f"invalid: {v}")
        return EXIT_INVALID
    adj = mx.gv_adjacency(m)
    if args.matrix_output:
        sys.stdout.write("".join(",".join(str(int(x)) for x in row) + "\n" for row in adj))
    else:
        n = adj.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                if adj[i, j]:
                    print(f"{i + 1} {j + 1}")
    return EXIT_OK


def cmd_trace(args):
    m1, m2 = _load_matrix(args.m1), _load_matrix(args.m2)
    for name, m in (("m1", m1), ("m2", m2)):
        try:
            v = mx.validate(m)
        except mx.StructuralError as exc:
            v = exc
        if v is not None:
            print(f"invalid {name}: {v}")
            return EXIT_INVALID
    if m1.shape != m2.shape:
        raise UsageError("m1 and m2 differ in size")
    if args.grid < 1:
        raise UsageError("--grid must be at least 1")
    tr = trace_path(m1, m2, args.grid, args.threshold)
    print("theta,turning_point")
    for t in tr.turning_points:
        print(f"{mx._fmt(t)},1")
    if args.samples:
        print("theta,flagged")
        for t, f in zip(tr.thetas, tr.flagged):
            print(f"{mx._fmt(t)},{int(f)}")
    return EXIT_OK


def cmd_simulate(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = v
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.trials is not None:
        overrides["trials"] = str(args.trials)
    if args.score_direction is not None:
        overrides["direction"] = args.score_direction
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    res = run_experiment(cfg, args.out, args.jobs)
    for name, p in res["paths"].items():
        print(f"{name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gromov", description="Gromov matrices of weighted trees.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out_opts(sp, fmt=True):
        sp.add_argument("-o", "--output", help="write to this file instead of stdout")
        if fmt:
            sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("validate", help="check the three conditions of a Gromov matrix")
    sp.add_argument("matrix")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("build", help="matrix of a base file or a build program")
    sp.add_argument("source")
    out_opts(sp)
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("reconstruct", help="tree (base file) from a Gromov matrix")
    sp.add_argument("matrix")
    sp.add_argument("--labels", help="comma-separated base-set names (default v1..vn)")
    sp.add_argument("--base-vertex", default="s")
    sp.add_argument("--program", action="store_true", help="print a build program instead")
    out_opts(sp, fmt=False)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("combine", help="convex or G-convex combination")
    sp.add_argument("--mode", choices=("convex", "gconvex"), required=True)
    sp.add_argument("--weights", required=True, help="comma-separated, summing to 1")
    sp.add_argument("matrices", nargs="+")
    out_opts(sp)
    sp.set_defaults(func=cmd_combine)

    sp = sub.add_parser("bound", help="lower bound on the smallest eigenvalue")
    sp.add_argument("source", help="build program or base file")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("eigmin", help="smallest eigenvalue")
    sp.add_argument("matrix")
    sp.set_defaults(func=cmd_eigmin)

    sp = sub.add_parser("gv", help="adjacency of base nodes with no base node between them")
    sp.add_argument("matrix")
    sp.add_argument("--matrix-output", action="store_true", help="print the 0/1 matrix")
    sp.set_defaults(func=cmd_gv)

    sp = sub.add_parser("trace", help="turning points of the G-convex path from m2 to m1")
    sp.add_argument("m1")
    sp.add_argument("m2")
    sp.add_argument("--grid", type=int, default=1000, help="number of theta intervals")
    sp.add_argument("--threshold", type=float, default=1e-6)
    sp.add_argument("--samples", action="store_true", help="also print every sample")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser(
        "simulate",
        help="run an experiment config",
        description=(
            "Writes trials.csv, summary.csv and plotdata.csv.  trials.csv columns: "
            "approx-path: trial,graph,nodes,mu,d0,d,ratio,d_le_d0; "
            "acq-order: trial,graph,nodes,source,accuracy,triples,excluded; "
            "source-snapshot: trial,graph,nodes,method,source,estimate,infected,"
            "candidates,error_distance,rank,rank_percentile,top_q,corners_ok; "
            "placement: trial,graph,nodes,k,c1,c2,r_c,iterations,converged,"
            "cost_matches,greedy_monotone,greedy_centers,gromov_centers."
        ),
    )
    sp.add_argument("config")
    sp.add_argument("--out", default="results", help="output directory")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--score-direction", choices=("max", "min"),
                    help="rank snapshot candidates by largest (default) or smallest centroid")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gromov {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
