"""Command-line front end: ``generate``, ``solve``, ``bench`` and ``eval``."""
import argparse
import csv
import itertools
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import admm, kernels
from .g2o import G2oFormatError, load_g2o, save_g2o
from .initialization import chordal_init, odometry_init
from .manifold_ls import LsParams, gauss_newton_solve, levenberg_marquardt_solve
from .metrics import evaluate, nrmse, rel_err, align_to_truth
from .synth import CubeSpec, RingSpec, gen_cube, gen_ring

log = logging.getLogger("quatpgo")

ALGOS = ("pieadmm", "mgn", "mlm")
INITS = ("chord", "odo", "file")
CSV_HEADER = ("iter", "time_s", "f", "g", "lagrangian", "phi", "residual", "rel_err")


class CliError(Exception):
    """User-facing failure with an exit code."""

    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _fmt(x):
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _remove(paths):
    for p in paths:
        try:
            Path(p).unlink()
        except FileNotFoundError:
            pass


# generate ------------------------------------------------------------------

def _build_synthetic(kind, cfg, seed):
    if kind == "ring":
        spec = RingSpec(int(cfg["n"]), float(cfg["sigma_r"]), float(cfg["sigma_t"]), int(seed))
        return gen_ring(spec)
    spec = CubeSpec(int(cfg["nhat"]), float(cfg["p"]), float(cfg["sigma_r"]), float(cfg["sigma_t_rel"]), int(seed))
    return gen_cube(spec)


def cmd_generate(args):
    if args.kind == "ring":
        cfg = {"n": args.n, "sigma_r": args.sigma_r, "sigma_t": args.sigma_t}
    else:
        cfg = {"nhat": args.nhat, "p": args.p, "sigma_r": args.sigma_r, "sigma_t_rel": args.sigma_t_rel}
    try:
        truth, graph = _build_synthetic(args.kind, cfg, args.seed)
    except ValueError as exc:
        raise CliError(str(exc), 2) from exc
    out = Path(args.out)
    paths = [out.with_name(out.name + ".g2o"), out.with_name(out.name + ".truth.g2o")]
    try:
        save_g2o(paths[0], graph, odometry_init(graph))
        save_g2o(paths[1], poses=truth)
    except BaseException:
        _remove(paths)
        raise
    print(f"wrote {paths[0]} ({graph.n} vertices, {graph.m} edges) and {paths[1]}")
    return 0


# solve ---------------------------------------------------------------------

def make_init(kind, graph, file_poses=None):
    if kind == "chord":
        return chordal_init(graph)
    if kind == "odo":
        return odometry_init(graph)
    if kind == "file":
        if file_poses is None or len(file_poses) != graph.n:
            raise CliError("--init file needs one vertex line per pose in the input file")
        return file_poses
    raise CliError(f"unknown init {kind!r}; expected one of {INITS}")


def run_solver(algo, graph, init, opts, callback=None):
    """Dispatch to a solver; ``opts`` holds the optional tuning flags. Returns ``(poses, info)``."""
    if algo == "pieadmm":
        kw = {k: opts.get(k) for k in ("beta", "tau1", "tau2", "tau3")}
        kw["mode"] = opts.get("mode") or "manual"
        for k in ("tol", "max_iter", "nthreads"):
            if opts.get(k) is not None:
                kw[k] = opts[k]
        poses, state = admm.solve(graph, init, admm.AdmmParams(**kw), callback)
        p = state.params
        info = {
            "status": state.status,
            "iterations": state.iter,
            "params": {
                "beta": p.beta, "tau1": p.tau1, "tau2": p.tau2, "tau3": p.tau3, "mode": p.mode,
                "tol": p.tol, "max_iter": p.max_iter, "threads": p.nthreads, "lam0": p.lam0,
            },
            "events": list(state.events),
        }
        return poses, info
    if algo in ("mgn", "mlm"):
        kw = {k: opts[k] for k in ("tol", "max_iter") if opts.get(k) is not None}
        params = LsParams(**kw)
        fn = gauss_newton_solve if algo == "mgn" else levenberg_marquardt_solve
        poses, res = fn(graph, init, params, callback)
        info = {
            "status": res.status,
            "iterations": res.iter,
            "params": {"tol": params.tol, "max_iter": params.max_iter},
        }
        if res.lm_lambda is not None:
            info["params"]["lm_lambda_final"] = res.lm_lambda
        return poses, info
    raise CliError(f"unknown algo {algo!r}; expected one of {ALGOS}")


def _load(path, what):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{what} file not found: {path}")
    try:
        return load_g2o(path)
    except (G2oFormatError, OSError) as exc:
        raise CliError(f"cannot read {what} file {path}: {exc}") from exc


def cmd_solve(args):
    graph, file_poses = _load(args.input, "input")
    truth = None
    if args.truth:
        _, truth = _load(args.truth, "truth")
        if len(truth) != graph.n:
            raise CliError(f"truth has {len(truth)} poses but the graph has {graph.n} vertices")
    threads = args.threads if args.threads is not None else kernels.default_threads()
    if threads < 1:
        raise CliError("--threads must be >= 1")
    try:
        init = make_init(args.init, graph, file_poses)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    opts = {
        "beta": args.beta, "tau1": args.tau1, "tau2": args.tau2, "tau3": args.tau3, "mode": args.mode,
        "tol": args.tol, "max_iter": args.max_iter, "nthreads": threads,
    }
    rows = []

    def callback(rec, poses):
        err = rel_err(align_to_truth(poses, truth), truth) if truth is not None else None
        rows.append([rec.iter, rec.time_s, rec.f, rec.g, rec.lagrangian, rec.phi, rec.residual, err])

    out = Path(args.out)
    paths = [out.with_name(out.name + s) for s in (".poses.g2o", ".convergence.csv", ".summary.json")]
    t0 = time.perf_counter()
    try:
        poses, info = run_solver(args.algo, graph, init, opts, callback)
    except admm.DivergenceError as exc:
        raise CliError(f"solver diverged: {exc}", 2) from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise CliError(f"solver failed: {exc}", 2) from exc
    wall = time.perf_counter() - t0

    summary = {
        "algo": args.algo,
        "init": args.init,
        "input": str(args.input),
        "n": graph.n,
        "m": graph.m,
        "backend": kernels.BACKEND,
        "wall_time_s": wall,
        **info,
        "final": {"f": rows[-1][2], "g": rows[-1][3], "objective": rows[-1][2] + rows[-1][3]},
    }
    if truth is not None:
        summary["metrics"] = evaluate(poses, truth)
        summary["rel_err"] = summary["metrics"]["rel_err"]
        summary["nrmse"] = summary["metrics"]["nrmse"]
    try:
        save_g2o(paths[0], poses=poses, vertex_ids=graph.vertex_ids)
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow([r[0]] + [_fmt(x) for x in r[1:]])
        paths[2].write_text(json.dumps(summary, indent=2, default=_json_default) + "\n", encoding="utf-8")
    except BaseException:
        _remove(paths)
        raise
    msg = f"{args.algo}: {info['status']} after {info['iterations']} iterations in {wall:.3f} s"
    if truth is not None:
        msg += f", rel_err {summary['rel_err']:.6g}"
    print(msg)
    return 0


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


# bench ---------------------------------------------------------------------

BENCH_KEYS = {
    "ring": ("n", "sigma_r", "sigma_t"),
    "cube": ("nhat", "p", "sigma_r", "sigma_t_rel"),
}
BENCH_DEFAULTS = {
    "ring": {"n": 100, "sigma_r": 0.01, "sigma_t": 0.05},
    "cube": {"nhat": 5, "p": 0.3, "sigma_r": 0.05, "sigma_t_rel": 0.2},
}


def expand_grid(kind, grid):
    """Cells of a bench grid.

    Top-level keys may be scalars or lists; lists are crossed. An optional
    ``cells`` list adds explicit cells (each merged over the scalar defaults).
    ``algos``, ``init`` and solver flags (``tol``, ``max_iter``, ...) are
    shared settings, not grid axes.
    """
    if not isinstance(grid, dict):
        raise CliError("grid JSON must be an object")
    keys = BENCH_KEYS[kind]
    unknown = set(grid) - set(keys) - {"cells", "algos", "init", "tol", "max_iter", "mode", "beta",
                                       "tau1", "tau2", "tau3"}
    if unknown:
        raise CliError(f"unknown grid keys: {sorted(unknown)}")
    base = dict(BENCH_DEFAULTS[kind])
    axes = {}
    for k in keys:
        if k in grid:
            v = grid[k]
            axes[k] = v if isinstance(v, list) else [v]
    cells = []
    if axes or "cells" not in grid:
        names = list(axes)
        for combo in itertools.product(*(axes[k] for k in names)):
            cells.append({**base, **dict(zip(names, combo))})
    for extra in grid.get("cells", []):
        bad = set(extra) - set(keys)
        if bad:
            raise CliError(f"unknown cell keys: {sorted(bad)}")
        cells.append({**base, **extra})
    return cells


def cmd_bench(args):
    gpath = Path(args.grid)
    if not gpath.is_file():
        raise CliError(f"grid file not found: {gpath}")
    try:
        grid = json.loads(gpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid grid JSON: {exc}") from exc
    if args.runs < 1:
        raise CliError("--runs must be >= 1")
    cells = expand_grid(args.kind, grid)
    algos = grid.get("algos", list(ALGOS))
    for a in algos:
        if a not in ALGOS:
            raise CliError(f"unknown algo {a!r} in grid")
    init_kind = grid.get("init", "chord")
    opts = {k: grid.get(k) for k in ("tol", "max_iter", "mode", "beta", "tau1", "tau2", "tau3")}
    opts["nthreads"] = args.threads if args.threads is not None else kernels.default_threads()
    keys = BENCH_KEYS[args.kind]

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    runs_path = outdir / "runs.csv"
    cells_path = outdir / "summary.csv"
    run_rows = []
    cell_rows = []
    for cell in cells:
        per_algo = {a: [] for a in algos}
        errors = {a: [] for a in algos}
        for run in range(args.runs):
            truth, graph = _build_synthetic(args.kind, cell, run)
            for a in algos:
                row = {**{k: cell[k] for k in keys}, "algo": a, "seed": run, "m": graph.m}
                try:
                    init = make_init(init_kind, graph)
                    t0 = time.perf_counter()
                    poses, info = run_solver(a, graph, init, opts)
                    elapsed = time.perf_counter() - t0
                    aligned = align_to_truth(poses, truth)
                    row.update(rel_err=rel_err(aligned, truth), nrmse=nrmse(aligned, truth), time_s=elapsed,
                               iterations=info["iterations"], status=info["status"], error="")
                    per_algo[a].append(row)
                except Exception as exc:  # recorded, bench continues
                    log.warning("cell %s algo %s seed %d failed: %s", cell, a, run, exc)
                    row.update(rel_err="", nrmse="", time_s="", iterations="", status="error",
                               error=f"{type(exc).__name__}: {exc}")
                    errors[a].append(row["error"])
                run_rows.append(row)
        for a in algos:
            ok = per_algo[a]
            mean = (lambda key: float(np.mean([r[key] for r in ok])) if ok else "")
            cell_rows.append({
                **{k: cell[k] for k in keys}, "algo": a, "runs": args.runs, "ok": len(ok),
                "rel_err": mean("rel_err"), "nrmse": mean("nrmse"), "time_s": mean("time_s"),
                "iterations": mean("iterations"), "errors": " | ".join(errors[a]),
            })
        print(f"cell {cell}: " + ", ".join(
            f"{r['algo']} rel_err={r['rel_err']:.4g}" if r["ok"] else f"{r['algo']} failed"
            for r in cell_rows[-len(algos):]
        ))

    run_fields = list(keys) + ["algo", "seed", "m", "rel_err", "nrmse", "time_s", "iterations", "status", "error"]
    cell_fields = list(keys) + ["algo", "runs", "ok", "rel_err", "nrmse", "time_s", "iterations", "errors"]
    try:
        for path, fields, rows in ((runs_path, run_fields, run_rows), (cells_path, cell_fields, cell_rows)):
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=fields)
                w.writeheader()
                w.writerows(rows)
    except BaseException:
        _remove([runs_path, cells_path])
        raise
    print(f"wrote {cells_path} and {runs_path}")
    return 0


# eval ----------------------------------------------------------------------

def cmd_eval(args):
    _, est = _load(args.est, "estimate")
    _, truth = _load(args.truth, "truth")
    if len(est) != len(truth):
        raise CliError(f"pose count mismatch: {len(est)} estimated vs {len(truth)} truth")
    try:
        report = evaluate(est, truth, args.align)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


# parser --------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="quatpgo", description="Quaternion pose graph optimization.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset and its ground truth")
    gsub = gen.add_subparsers(dest="kind", required=True)
    ring = gsub.add_parser("ring", help="closed loop on a circle")
    ring.add_argument("--n", type=int, required=True)
    ring.add_argument("--sigma-r", type=_nonneg_float, required=True)
    ring.add_argument("--sigma-t", type=_nonneg_float, required=True)
    ring.add_argument("--seed", type=int, required=True)
    ring.add_argument("--out", required=True, help="output prefix")
    cube = gsub.add_parser("cube", help="grid-world trajectory with random loop closures")
    cube.add_argument("--nhat", type=int, required=True)
    cube.add_argument("--p", type=float, required=True)
    cube.add_argument("--sigma-r", type=_nonneg_float, required=True)
    cube.add_argument("--sigma-t-rel", type=_nonneg_float, required=True)
    cube.add_argument("--seed", type=int, required=True)
    cube.add_argument("--out", required=True, help="output prefix")
    gen.set_defaults(func=cmd_generate)

    sol = sub.add_parser("solve", help="optimize a g2o pose graph")
    sol.add_argument("--algo", choices=ALGOS, required=True)
    sol.add_argument("--init", choices=INITS, required=True)
    sol.add_argument("--input", required=True)
    sol.add_argument("--truth")
    sol.add_argument("--beta", type=float)
    sol.add_argument("--tau1", type=float)
    sol.add_argument("--tau2", type=float)
    sol.add_argument("--tau3", type=float)
    sol.add_argument("--mode", choices=admm.MODES)
    sol.add_argument("--tol", type=float)
    sol.add_argument("--max-iter", type=int)
    sol.add_argument("--threads", type=_positive_int, help="defaults to $PGO_THREADS, else all cores")
    sol.add_argument("--out", required=True, help="output prefix")
    sol.set_defaults(func=cmd_solve)

    ben = sub.add_parser("bench", help="sweep a noise grid over all solvers")
    ben.add_argument("kind", choices=("ring", "cube"))
    ben.add_argument("--grid", required=True, help="JSON grid file")
    ben.add_argument("--runs", type=int, required=True)
    ben.add_argument("--threads", type=_positive_int)
    ben.add_argument("--out", required=True, help="output directory")
    ben.set_defaults(func=cmd_bench)

    ev = sub.add_parser("eval", help="compare an estimate with ground truth")
    ev.add_argument("--est", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--align", choices=("anchor0", "none"), default="anchor0")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
