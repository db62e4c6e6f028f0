"""Command-line front end: ``srot solve | bench | transfer | verify | report``.

Options can also come from a flat ``key = value`` file given with ``--config``
(keys are long option names, dashes or underscores); flags override the file
and the file overrides built-in defaults.  Exit status: 0 on success or
convergence, 2 when a solver ran out of epochs, 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import lp_transport_solve
from .colortransfer import color_transfer, read_ppm, write_ppm
from .core import SemiRelaxedProblem, SrotError, random_problem
from .metrics import TRACE_COLUMNS, marginal_error, sparsity
from .solvers import SolverOptions, solve
from .traceio import (
    AGGREGATE_SCHEMA,
    RUN_KEY_COLUMNS,
    RUNS_SCHEMA,
    TRACE_SCHEMA,
    aggregate,
    aggregate_columns,
    read_csv,
    svg_line_chart,
    trace_rows,
    write_csv,
)
from .verify import format_table, run_suite

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2

_ALGOS = {"fw": "fw", "bcfw": "bcfw"}
_SAMPLING = {"uniform": "uniform", "u": "uniform", "permutation": "permutation",
             "p": "permutation", "gap-adaptive": "gap_adaptive",
             "gap_adaptive": "gap_adaptive", "ga": "gap_adaptive"}
_STEPS = {"els": "els", "dec": "decay", "decay": "decay"}
_VARIANTS = {"plain": "plain", "away": "away", "pairwise": "pairwise"}
_KEY_ALIASES = {"lambda": "lam", "lambdas": "lams"}


class CLIError(Exception):
    """Invalid invocation; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _choice(table, what):
    def conv(text):
        key = str(text).strip().lower()
        if key not in table:
            raise argparse.ArgumentTypeError(
                f"invalid {what} {text!r}; choose from {sorted(set(table))}")
        return table[key]
    conv.__name__ = what
    return conv


def _float_list(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _seed_list(text):
    """``"5"`` means seeds 0..4; ``"3..7"`` an inclusive range; ``"1,4"`` a list."""
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    if "," in text:
        return _int_list(text)
    return list(range(int(text)))


def _size_range(text):
    text = str(text).strip()
    if ".." in text:
        lo, hi = (int(x) for x in text.split(".."))
    else:
        lo = hi = int(text)
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid size range {text!r}")
    return lo, hi


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[_KEY_ALIASES.get(key, key)] = value
    return values


def _add_solver_flags(p, step_default="els"):
    p.add_argument("--algo", type=_choice(_ALGOS, "algorithm"), default="bcfw")
    p.add_argument("--sampling", type=_choice(_SAMPLING, "sampling"), default="uniform")
    p.add_argument("--step", type=_choice(_STEPS, "step rule"), default=step_default)
    p.add_argument("--variant", type=_choice(_VARIANTS, "variant"), default="plain")
    p.add_argument("--eps", type=float, default=1e-6, help="stopping gap tolerance")
    p.add_argument("--max-epochs", type=int, default=1000)
    p.add_argument("--gap-check-period", type=int, default=1)
    p.add_argument("--refresh-m", type=int, default=1,
                   help="global gap refresh every M*n iterations (gap-adaptive sampling)")
    p.add_argument("--seed", type=int, default=0)


def _add_output_flags(p):
    p.add_argument("--out", default="srot-out", help="output directory")
    p.add_argument("--deterministic", action="store_true",
                   help="write zero wall-clock columns so reruns are byte-identical")
    p.add_argument("--config", help="key = value file with option defaults")


def build_parser():
    parser = _Parser(prog="srot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one instance")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--gen", choices=["random"], help="instance generator")
    src.add_argument("--instance", help="JSON file with C, a, b")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lp", action="store_true",
                   help="solve the transport LP and record matrix/value errors")
    _add_solver_flags(p)
    _add_output_flags(p)

    p = sub.add_parser("bench", help="sweep lambdas x algorithms x seeds")
    p.add_argument("--lambdas", dest="lams", type=_float_list, default=[1e-2])
    p.add_argument("--algos", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                   default=["BCFW-U-ELS", "BCPFW-ELS"],
                   help="comma-separated labels such as FW-DEC, BCFW-GA-ELS, BCAFW-ELS")
    p.add_argument("--seeds", type=_seed_list, default=list(range(3)))
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--relative-eps", action="store_true",
                   help="stop at eps * f(T0) instead of an absolute gap")
    p.add_argument("--max-epochs", type=int, default=1000)
    p.add_argument("--refresh-m", type=int, default=1)
    p.add_argument("--lp", action="store_true")
    p.add_argument("--workers", type=int, help="process pool size (default SROT_THREADS or 1)")
    p.add_argument("--charts", action="store_true", help="also write SVG charts")
    _add_output_flags(p)

    p = sub.add_parser("transfer", help="color transfer between two PPM images")
    p.add_argument("source")
    p.add_argument("reference")
    p.add_argument("--k", type=int, default=16, help="palette size for both images")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--snapshots", type=_int_list, default=[],
                   help="comma-separated epochs at which to write intermediate images")
    p.add_argument("--lp", action="store_true")
    _add_solver_flags(p)
    _add_output_flags(p)

    p = sub.add_parser("verify", help="run the randomized property batteries")
    p.add_argument("--seeds", type=int, default=20, help="instances per battery (scaled)")
    p.add_argument("--sizes", type=_size_range, default=(2, 16), help="e.g. 2..8")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="fewer curvature samples")
    p.add_argument("--perturb-gradient", action="store_true",
                   help="inject a gradient fault; the gap check must then fail")
    p.add_argument("--config")

    p = sub.add_parser("report", help="median/IQR tables and SVG charts from bench output")
    p.add_argument("input", help="bench output directory or traces.csv")
    p.add_argument("--out", help="output directory (default: the input directory)")
    p.add_argument("--config")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        parser.exit(EXIT_ERROR)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        try:
            values = read_config(args.config)
        except (OSError, CLIError) as exc:
            parser.exit(EXIT_ERROR, f"srot: error: {exc}\n")
        unknown = sorted(set(values) - known)
        if unknown:
            parser.exit(EXIT_ERROR, f"srot: error: unknown config keys {unknown}\n")
        for action in sub._actions:
            if action.dest in values and action.const is not None and action.nargs == 0:
                values[action.dest] = values[action.dest].lower() in ("1", "true", "yes")
        # string defaults are converted by argparse like command-line values
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def _options(args, **extra):
    return SolverOptions(algorithm=args.algo, sampling=args.sampling, step_rule=args.step,
                         variant=args.variant, epsilon=args.eps, max_epochs=args.max_epochs,
                         gap_check_period=args.gap_check_period,
                         global_refresh_m=args.refresh_m, rng_seed=args.seed, **extra)


def _load_instance(path, lam):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return SemiRelaxedProblem(data["C"], data["a"], data["b"], lam)
    except KeyError as exc:
        raise CLIError(f"{path}: missing field {exc}") from None


def _summary(problem, sol, args, extra=None):
    zero = getattr(args, "deterministic", False)
    meta = sol.trace.meta
    out = {
        "label": meta["label"],
        "status": "converged" if sol.converged else "budget_exhausted",
        "converged": bool(sol.converged),
        "final_gap": sol.final_gap,
        "objective": sol.trace.records[-1].objective,
        "epochs": sol.epochs,
        "iterations": sol.iterations,
        "marginal_error": marginal_error(sol.plan, problem.a, problem.b),
        "sparsity": sparsity(sol.plan),
        "instance": meta["instance"],
        "shape": meta["shape"],
        "lambda": problem.lam,
        "seed": meta["seed"],
        "options": meta["options"],
        "solver_seconds": 0.0 if zero else meta["solver_seconds"],
        "monitor_seconds": 0.0 if zero else meta["monitor_seconds"],
        "trace_schema": TRACE_SCHEMA,
    }
    for key in ("first_global_refresh", "uniform_fallbacks"):
        if key in meta:
            out[key] = meta[key]
    out.update(extra or {})
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_lambda(args):
    if args.lam is None:
        raise CLIError("--lambda is required (flag or config file)")
    return args.lam


def cmd_solve(args) -> int:
    lam = _require_lambda(args)
    if args.instance:
        problem = _load_instance(args.instance, lam)
    else:
        problem = random_problem(args.m, args.n, lam, seed=args.seed)
    opts = _options(args)
    lp = lp_transport_solve(problem.C, problem.a, problem.b) if args.lp else None
    sol = solve(problem, opts, lp_plan=lp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "plan.txt", sol.plan.T, fmt="%.17e")
    write_csv(out / "trace.csv", TRACE_SCHEMA, TRACE_COLUMNS,
              trace_rows(sol.trace, zero_time=args.deterministic))
    summary = _summary(problem, sol, args)
    _write_json(out / "summary.json", summary)
    print(f"{summary['label']}: {summary['status']} after {sol.epochs} epochs, "
          f"gap {sol.final_gap:.3e}, objective {summary['objective']:.6e}")
    return EXIT_OK if sol.converged else EXIT_BUDGET


def _bench_run(task):
    """One benchmark cell; returns plain data so it can cross process boundaries."""
    run_id, label, lam, seed, cfg = task
    from .solvers import parse_label
    from .core import vertex_plan, objective

    try:
        problem = random_problem(cfg["m"], cfg["n"], lam, seed=seed)
        eps = cfg["eps"]
        if cfg["relative_eps"]:
            eps *= objective(problem, vertex_plan(problem))
        opts = parse_label(label, epsilon=eps, max_epochs=cfg["max_epochs"],
                           global_refresh_m=cfg["refresh_m"], rng_seed=seed)
        lp = lp_transport_solve(problem.C, problem.a, problem.b) if cfg["lp"] else None
        sol = solve(problem, opts, lp_plan=lp)
        return {"run": run_id, "label": label, "lambda": lam, "seed": seed,
                "status": "converged" if sol.converged else "budget_exhausted",
                "epochs": sol.epochs, "final_gap": sol.final_gap,
                "objective": sol.trace.records[-1].objective,
                "solver_seconds": sol.trace.meta["solver_seconds"],
                "records": sol.trace.to_dicts(), "error": ""}
    except Exception as exc:  # recorded per run; the sweep continues
        return {"run": run_id, "label": label, "lambda": lam, "seed": seed,
                "status": "error", "epochs": 0, "final_gap": math.nan,
                "objective": math.nan, "solver_seconds": 0.0, "records": [],
                "error": f"{type(exc).__name__}: {exc}"}


def _pool_size(args):
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("SROT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CLIError(f"SROT_THREADS must be an integer, got {env!r}") from None
    return 1


def cmd_bench(args) -> int:
    from .solvers import parse_label

    for label in args.algos:
        parse_label(label)  # fail fast on typos
    cfg = {"m": args.m, "n": args.n, "eps": args.eps, "relative_eps": args.relative_eps,
           "max_epochs": args.max_epochs, "refresh_m": args.refresh_m, "lp": args.lp}
    tasks = []
    for lam in args.lams:
        for label in args.algos:
            for seed in args.seeds:
                tasks.append((len(tasks), label, lam, seed, cfg))
    workers = _pool_size(args)
    if workers == 1:
        results = [_bench_run(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_run, tasks))
    results.sort(key=lambda r: r["run"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    zero = args.deterministic
    run_cols = RUN_KEY_COLUMNS + ("status", "epochs", "final_gap", "objective",
                                  "solver_seconds", "error")
    write_csv(out / "runs.csv", RUNS_SCHEMA, run_cols,
              [tuple(0.0 if (zero and c == "solver_seconds") else r[c] for c in run_cols)
               for r in results])
    trace_out = []
    for r in results:
        for rec in r["records"]:
            vals = [0.0 if (zero and c == "wall_seconds") else rec[c] for c in TRACE_COLUMNS]
            trace_out.append((r["run"], r["label"], r["lambda"], r["seed"], *vals))
    write_csv(out / "traces.csv", TRACE_SCHEMA, RUN_KEY_COLUMNS + TRACE_COLUMNS, trace_out)
    agg = aggregate((r["label"], r["lambda"], _zero_time(r["records"], zero))
                    for r in results if r["records"])
    write_csv(out / "aggregate.csv", AGGREGATE_SCHEMA, aggregate_columns(), agg)
    if args.charts:
        _write_charts(out, agg)
    failed = [r for r in results if r["status"] == "error"]
    done = sum(r["status"] == "converged" for r in results)
    print(f"{len(results)} runs: {done} converged, "
          f"{len(results) - done - len(failed)} out of budget, {len(failed)} failed")
    for r in failed:
        print(f"  run {r['run']} ({r['label']}, lambda={r['lambda']}, seed={r['seed']}): "
              f"{r['error']}", file=sys.stderr)
    return EXIT_ERROR if failed else EXIT_OK


def _zero_time(records, zero):
    if not zero:
        return records
    return [dict(r, wall_seconds=0.0) for r in records]


_CHART_METRICS = (("objective", True), ("gap", True), ("marginal_error", True),
                  ("sparsity", False), ("matrix_error", True), ("value_error", True),
                  ("wall_seconds", False))


def _write_charts(out, agg_rows):
    cols = aggregate_columns()
    idx = {c: k for k, c in enumerate(cols)}
    series_rows = {}
    for row in agg_rows:
        series_rows.setdefault((row[0], float(row[1])), []).append(row)
    written = []
    for metric, log_y in _CHART_METRICS:
        series = {}
        for (label, lam), rows in series_rows.items():
            x = [float(r[idx["epoch"]]) for r in rows]
            y = [float(r[idx[f"{metric}_median"]]) for r in rows]
            if all(math.isnan(v) for v in y):
                continue
            lo = [float(r[idx[f"{metric}_q25"]]) for r in rows]
            hi = [float(r[idx[f"{metric}_q75"]]) for r in rows]
            series[f"{label} lam={lam:g}"] = (x, y, lo, hi)
        if not series:
            continue
        path = Path(out) / f"{metric}.svg"
        path.write_text(svg_line_chart(series, f"{metric} (median, IQR band)", "epoch",
                                       metric, log_y=log_y), encoding="utf-8")
        written.append(path.name)
    return written


def cmd_transfer(args) -> int:
    lam = _require_lambda(args)
    try:
        src = read_ppm(args.source)
        ref = read_ppm(args.reference)
    except OSError as exc:
        raise CLIError(f"cannot read image: {exc}") from None
    opts = _options(args)
    lp_plan = None
    if args.lp:
        from .colortransfer import build_cost, kmeans_quantize
        qs, qr = kmeans_quantize(src, args.k, seed=args.seed), kmeans_quantize(
            ref, args.k, seed=args.seed)
        lp_plan = lp_transport_solve(build_cost(qs, qr), qs.histogram, qr.histogram)
    res = color_transfer(src, ref, args.k, lam, opts, seed=args.seed,
                         snapshot_epochs=args.snapshots, lp_plan=lp_plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(res.image, out / "output.ppm")
    for epoch, img in res.snapshots.items():
        write_ppm(img, out / f"snapshot_{epoch:06d}.ppm")
    write_csv(out / "trace.csv", TRACE_SCHEMA, TRACE_COLUMNS,
              trace_rows(res.solution.trace, zero_time=args.deterministic))
    sol = res.solution
    summary = _summary(res.problem, sol, args, {
        "k_source": res.source.k, "k_reference": res.reference.k,
        "k_reduced": bool(res.source.k_reduced or res.reference.k_reduced),
        "starved_rows": np.flatnonzero(res.starved_rows).tolist(),
        "snapshots": sorted(res.snapshots),
        "missing_snapshots": sorted(set(args.snapshots) - set(res.snapshots)),
    })
    _write_json(out / "summary.json", summary)
    print(f"{summary['label']}: {summary['status']} after {sol.epochs} epochs, "
          f"wrote {out / 'output.ppm'}")
    return EXIT_OK if sol.converged else EXIT_BUDGET


def cmd_verify(args) -> int:
    results = run_suite(seeds=args.seeds, sizes=args.sizes, seed=args.seed,
                        perturb_gradient=args.perturb_gradient, quick=args.quick)
    print(format_table(results))
    ok = all(r.passed for r in results)
    print("all properties pass" if ok else "some properties FAILED")
    return EXIT_OK if ok else EXIT_ERROR


def _load_trace_runs(path):
    schema, cols, rows = read_csv(path)
    if schema != TRACE_SCHEMA:
        raise CLIError(f"{path}: expected schema {TRACE_SCHEMA}, found {schema}")
    missing = [c for c in RUN_KEY_COLUMNS + TRACE_COLUMNS if c not in cols]
    if missing:
        raise CLIError(f"{path}: missing columns {missing}")
    idx = {c: k for k, c in enumerate(cols)}
    runs = {}
    for row in rows:
        key = (int(row[idx["run"]]), row[idx["label"]], float(row[idx["lambda"]]))
        rec = {c: float(row[idx[c]]) for c in TRACE_COLUMNS}
        rec["epoch"] = int(rec["epoch"])
        runs.setdefault(key, []).append(rec)
    return [(label, lam, recs) for (_, label, lam), recs in sorted(runs.items())]


def cmd_report(args) -> int:
    src = Path(args.input)
    path = src / "traces.csv" if src.is_dir() else src
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate(_load_trace_runs(path))
    write_csv(out / "report.csv", AGGREGATE_SCHEMA, aggregate_columns(), agg)
    charts = _write_charts(out, agg)
    cols = aggregate_columns()
    idx = {c: k for k, c in enumerate(cols)}
    last = {}
    for row in agg:
        last[(row[0], row[1])] = row
    print(f"{'configuration':<28} {'epoch':>6} {'runs':>4} {'objective':>12} "
          f"{'gap median':>11} {'gap IQR':>23}")
    for (label, lam), row in sorted(last.items()):
        print(f"{label + ' lam=' + format(lam, 'g'):<28} {row[idx['epoch']]:>6} "
              f"{row[idx['runs']]:>4} {row[idx['objective_median']]:>12.5e} "
              f"{row[idx['gap_median']]:>11.3e} "
              f"[{row[idx['gap_q25']]:.3e}, {row[idx['gap_q75']]:.3e}]")
    print(f"wrote {out / 'report.csv'} and {len(charts)} charts")
    return EXIT_OK


_COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "transfer": cmd_transfer,
             "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CLIError, SrotError, ValueError, OSError) as exc:
        print(f"srot {args.command}: error: {exc}", file=sys.stderr)
        if os.environ.get("SROT_DEBUG"):
            traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
