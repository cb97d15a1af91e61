"""Command-line front end: single bounds, experiment sweeps, CSV output.

Commands: ``bound`` computes one bound for a model file; ``fig3`` sweeps
coupling strengths on random Ising grids comparing the lower-bound
optimizer against mean field and the upper bound; ``adapt-trace``
contrasts fixed versus reselected positive trees over iterations;
``weight-surface`` scans the bound value over the weight plane of a
triangle model.  All CSV output is deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from .bounds import BoundResult
from .exact import (
    StateSpaceCapError,
    UnsupportedStructureError,
    brute_force_log_partition,
    grid_log_partition,
)
from .models import (
    ModelFamilySpec,
    ModelFormatError,
    PairwiseModel,
    gen_ising_grid,
    load_model,
)
from .optimize import (
    OptimizerOptions,
    naive_mean_field,
    optimize_lower_bound,
    optimize_upper_bound,
    structured_mean_field,
)
from .propagation import MpOptions, free_energy, run_message_passing
from .trees import Subtree, WeightDomain, WeightedEnsemble, dump_ensemble

METHODS = ("trbp", "negtrbp", "naive-mf", "structured-mf", "loopy-bp")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNCERTIFIED = 2


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(x)
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _exact_log_partition(model: PairwiseModel) -> float | None:
    try:
        return brute_force_log_partition(model)
    except StateSpaceCapError:
        pass
    try:
        return grid_log_partition(model)
    except UnsupportedStructureError:
        return None


def _mp_options(args, max_iters=None) -> MpOptions:
    return MpOptions(
        max_iters=max_iters if max_iters is not None else args.max_iters,
        tol=args.tol,
        damping=args.damping,
    )


def _parse_skeleton(model: PairwiseModel, text: str) -> Subtree:
    edges = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        i, j = part.split("-")
        edges.append((int(i), int(j)))
    return Subtree.of(model, edges)


def _run_method(model: PairwiseModel, method: str, args):
    """Dispatch one bound computation; returns (BoundResult, ensemble|None)."""
    opts = OptimizerOptions(
        outer_iters=args.outer_iters,
        mp=_mp_options(args),
        seed=args.seed,
    )
    if method == "trbp":
        result, trace = optimize_upper_bound(model, opts)
        return result, trace.final_ensemble
    if method == "negtrbp":
        result, trace = optimize_lower_bound(model, opts)
        return result, trace.final_ensemble
    if method == "naive-mf":
        result, _ = naive_mean_field(model, restarts=args.restarts, seed=args.seed)
        return result, None
    if method == "structured-mf":
        skeleton = _parse_skeleton(model, args.skeleton)
        return structured_mean_field(model, skeleton, _mp_options(args)), None
    if method == "loopy-bp":
        mu = {e: 1.0 for e in model.edges}
        state = run_message_passing(model, mu, _mp_options(args))
        value = free_energy(model, mu, state.pseudomarginals)
        result = BoundResult(
            value=value, direction="none", certified=False, residual_max=math.nan,
            converged=state.converged, iterations=state.iterations,
            domain=WeightDomain("mixed"))
        return result, None
    raise ValueError(f"unknown method {method!r}")


def cmd_bound(args, out) -> int:
    with open(args.model) as fh:
        model = load_model(fh.read())
    start = time.perf_counter()
    result, ensemble = _run_method(model, args.method, args)
    wall = time.perf_counter() - start
    exact = _exact_log_partition(model)
    lines = [
        f"model={args.model}",
        f"method={args.method}",
        f"value={_fmt(result.value)}",
        f"direction={result.direction}",
        f"certified={result.certified}",
        f"residual_max={_fmt(result.residual_max)}",
        f"converged={result.converged}",
        f"iterations={result.iterations}",
    ]
    if exact is not None:
        lines.append(f"exact={_fmt(exact)}")
        lines.append(f"error={_fmt(result.value - exact)}")
    lines.append(f"wall_time_s={_fmt(wall)}")
    print("\n".join(lines), file=out)
    if args.dump_ensemble:
        if ensemble is not None:
            print(dump_ensemble(ensemble), end="", file=out)
        else:
            print("ensemble=none", file=out)
    return EXIT_OK if result.certified else EXIT_UNCERTIFIED


DEFAULT_C_GRID = "0.25,0.5,0.75,1.0,1.25,1.5,1.75,2.0"


def run_fig3(mode: str, rows: int, cols: int, c_grid, trials: int, seed: int,
             outer_iters: int = 50, mp: MpOptions | None = None, restarts: int = 10):
    """Error-vs-coupling sweep; returns (rows, summary) record lists.

    Per-trial seeds are seed XOR trial index.  Row records are
    (c, trial, method, bound, exact, error) in deterministic order.
    """
    mp = mp or MpOptions()
    records = []
    for c in c_grid:
        for trial in range(trials):
            derived = seed ^ trial
            spec = ModelFamilySpec(
                family="ising-grid", rows=rows, cols=cols,
                coupling=mode, strength=c, seed=derived)
            model = gen_ising_grid(spec)
            exact = grid_log_partition(model)
            opts = OptimizerOptions(outer_iters=outer_iters, mp=mp, seed=derived)
            lower, _ = optimize_lower_bound(model, opts)
            mf, _ = naive_mean_field(model, restarts=restarts, seed=derived)
            upper, _ = optimize_upper_bound(
                model, OptimizerOptions(outer_iters=outer_iters, mp=mp, seed=derived))
            for method, res in (("negtrbp", lower), ("naive-mf", mf), ("trbp", upper)):
                records.append((c, trial, method, res.value, exact,
                                res.value - exact, res.certified))
    summary = []
    for c in c_grid:
        for method in ("negtrbp", "naive-mf", "trbp"):
            errs = np.array([r[5] for r in records if r[0] == c and r[2] == method])
            summary.append((c, method, float(np.median(errs)),
                            float(np.quantile(errs, 0.25)), float(np.quantile(errs, 0.75))))
    return records, summary


def _fig3_csvs(records, summary) -> tuple[str, str]:
    main = ["c,trial,method,bound,exact,error"]
    for c, trial, method, bound, exact, error, _ in records:
        main.append(f"{_fmt(c)},{trial},{method},{_fmt(bound)},{_fmt(exact)},{_fmt(error)}")
    summ = ["c,method,median_error,q25_error,q75_error"]
    for c, method, med, q25, q75 in summary:
        summ.append(f"{_fmt(c)},{method},{_fmt(med)},{_fmt(q25)},{_fmt(q75)}")
    return "\n".join(main) + "\n", "\n".join(summ) + "\n"


def cmd_fig3(args, out) -> int:
    if args.full:
        rows = cols = 10
    else:
        rows, cols = args.rows, args.cols
    c_grid = [float(tok) for tok in args.c_grid.split(",") if tok.strip()]
    records, summary = run_fig3(
        args.mode, rows, cols, c_grid, args.trials, args.seed,
        outer_iters=args.outer_iters, mp=_mp_options(args), restarts=args.restarts)
    main_csv, summary_csv = _fig3_csvs(records, summary)
    if args.out is not None:
        with open(args.out, "w") as fh:
            fh.write(main_csv)
        summary_path = args.summary_out or (str(args.out) + ".summary.csv")
        with open(summary_path, "w") as fh:
            fh.write(summary_csv)
    else:
        out.write(main_csv)
        out.write("# summary\n")
        out.write(summary_csv)
    if args.require_certified and any(not r[6] for r in records if r[2] != "naive-mf"):
        return EXIT_UNCERTIFIED
    return EXIT_OK


def run_adapt_trace(model: PairwiseModel, outer_iters: int, seed: int,
                    mp: MpOptions | None = None):
    """Lower-bound traces with positive-tree reselection off and on."""
    mp = mp or MpOptions()
    off_opts = OptimizerOptions(outer_iters=outer_iters, mp=mp, seed=seed,
                                reselect_positive=False)
    on_opts = OptimizerOptions(outer_iters=outer_iters, mp=mp, seed=seed,
                               reselect_positive=True)
    res_off, trace_off = optimize_lower_bound(model, off_opts)
    res_on, trace_on = optimize_lower_bound(model, on_opts)
    return (res_off, trace_off), (res_on, trace_on)


def cmd_adapt_trace(args, out) -> int:
    if args.model is not None:
        with open(args.model) as fh:
            model = load_model(fh.read())
    else:
        spec = ModelFamilySpec(family="ising-grid", rows=args.rows, cols=args.cols,
                               coupling=args.coupling, strength=args.c, seed=args.seed)
        model = gen_ising_grid(spec)
    (res_off, trace_off), (res_on, trace_on) = run_adapt_trace(
        model, args.outer_iters, args.seed, _mp_options(args))
    lines = ["iter,bound_fixed,bound_chowliu"]
    for row_off, row_on in zip(trace_off.rows, trace_on.rows):
        lines.append(f"{row_off.iteration},{_fmt(row_off.bound)},{_fmt(row_on.bound)}")
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    if args.require_certified and not (res_off.certified and res_on.certified):
        return EXIT_UNCERTIFIED
    return EXIT_OK


TRIANGLE_EDGES = ((0, 1), (0, 2), (1, 2))
WEIGHT_SKIP_BAND = 1e-3


def triangle_spanning_trees(model: PairwiseModel) -> list[Subtree]:
    """The three spanning trees of a triangle, in lexicographic order."""
    return [
        Subtree.of(model, [(0, 1), (0, 2)]),
        Subtree.of(model, [(0, 1), (1, 2)]),
        Subtree.of(model, [(0, 2), (1, 2)]),
    ]


def weight_surface_point(model: PairwiseModel, weights, exact: float,
                         mp: MpOptions | None = None):
    """Evaluate the optimized bound at one weight vector on the triangle.

    Returns (w1, w2, w3, converged, psi, exceeds_exact); psi is NaN when
    the induced edge appearances are too close to zero to run.
    """
    mp = mp or MpOptions(max_iters=500)
    w1, w2, w3 = weights
    mu = {(0, 1): w1 + w2, (0, 2): w1 + w3, (1, 2): w2 + w3}
    if any(abs(v) < 1e-6 for v in mu.values()):
        return (w1, w2, w3, False, math.nan, False)
    state = run_message_passing(model, mu, mp)
    psi = free_energy(model, mu, state.pseudomarginals)
    return (w1, w2, w3, state.converged, psi, bool(psi > exact))


def run_weight_surface(model: PairwiseModel, resolution: float,
                       wmin: float = -0.6, wmax: float = 1.6,
                       mp: MpOptions | None = None):
    if model.node_count != 3 or model.edges != TRIANGLE_EDGES:
        raise UnsupportedStructureError(
            "weight surface requires a 3-node triangle model")
    exact = brute_force_log_partition(model)
    steps = int(round((wmax - wmin) / resolution)) + 1
    grid = [wmin + k * resolution for k in range(steps)]
    rows = []
    for w1 in grid:
        for w2 in grid:
            w3 = 1.0 - w1 - w2
            if min(abs(w1), abs(w2), abs(w3)) < WEIGHT_SKIP_BAND:
                continue
            rows.append(weight_surface_point(model, (w1, w2, w3), exact, mp))
    return rows, exact


def cmd_weight_surface(args, out) -> int:
    with open(args.model) as fh:
        model = load_model(fh.read())
    rows, _ = run_weight_surface(
        model, args.resolution, args.wmin, args.wmax,
        _mp_options(args, max_iters=args.max_iters))
    lines = ["w1,w2,w3,converged,psi,exceeds_exact"]
    for w1, w2, w3, converged, psi, exceeds in rows:
        lines.append(f"{_fmt(w1)},{_fmt(w2)},{_fmt(w3)},{converged},{_fmt(psi)},{exceeds}")
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--out", default=None, help="output path (default stdout)")
    shared.add_argument("--tol", type=float, default=1e-8)
    shared.add_argument("--max-iters", type=int, default=2000)
    shared.add_argument("--damping", type=float, default=0.5)
    shared.add_argument("--require-certified", action="store_true")
    shared.add_argument("--dump-ensemble", action="store_true")
    shared.add_argument("--full", action="store_true",
                        help="paper-scale settings (10x10 grids) where applicable")

    parser = argparse.ArgumentParser(
        prog="treebound",
        description="Certified bounds on log partition functions of pairwise MRFs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", parents=[shared], help="bound one model file")
    p.add_argument("model")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--outer-iters", type=int, default=50)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--skeleton", default="",
                   help="structured-mf skeleton as 'i-j;i-j' (default empty)")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("fig3", parents=[shared], help="error-vs-coupling sweep")
    p.add_argument("--mode", choices=("attractive", "mixed"), default="mixed")
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--c-grid", default=DEFAULT_C_GRID)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--outer-iters", type=int, default=50)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--summary-out", default=None)
    p.set_defaults(func=cmd_fig3)

    p = sub.add_parser("adapt-trace", parents=[shared],
                       help="fixed vs reselected positive tree")
    p.add_argument("--model", default=None)
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--coupling", choices=("attractive", "mixed"), default="attractive")
    p.add_argument("--c", type=float, default=0.6)
    p.add_argument("--outer-iters", type=int, default=50)
    p.set_defaults(func=cmd_adapt_trace)

    p = sub.add_parser("weight-surface", parents=[shared],
                       help="bound value over the triangle weight plane")
    p.add_argument("model")
    p.add_argument("--resolution", type=float, default=0.05)
    p.add_argument("--wmin", type=float, default=-0.6)
    p.add_argument("--wmax", type=float, default=1.6)
    p.set_defaults(func=cmd_weight_surface)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, sys.stdout)
    except (OSError, ModelFormatError, UnsupportedStructureError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
