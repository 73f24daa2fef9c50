"""Compare the compiled and numpy kernel backends.

Times each per-vertex kernel and a full ADMM solve on synthetic cube graphs:

    python benchmarks/bench_kernels.py --nhat 5 8 10 --repeat 5 --json out.json
"""
import argparse
import json
import os
import sys
import timeit
from contextlib import contextmanager

from quatpgo import admm, kernels
from quatpgo.initialization import chordal_init
from quatpgo.model import SplitVariables
from quatpgo.synth import CubeSpec, gen_cube

KERNELS = ("objective", "grad_p", "grad_q", "p_step", "q_step", "t_rhs")


@contextmanager
def use_backend(name):
    mod = kernels.load(name)
    saved = {k: getattr(kernels, k) for k in KERNELS}
    for k in KERNELS:
        setattr(kernels, k, getattr(mod, k))
    try:
        yield mod
    finally:
        for k, v in saved.items():
            setattr(kernels, k, v)


def _calls(mod, P, v, threads):
    beta, tau = 10.0, 0.1
    return {
        "objective": lambda: mod.objective(P, v.p, v.q, v.t, threads),
        "grad_p": lambda: mod.grad_p(P, v.p, v.q, v.t, threads),
        "grad_q": lambda: mod.grad_q(P, v.p, v.q, v.t, threads),
        "p_step": lambda: mod.p_step(P, v.p, v.q, v.t, v.lam, beta, tau, threads),
        "q_step": lambda: mod.q_step(P, v.p, v.q, v.t, v.lam, beta, tau, threads),
        "t_rhs": lambda: mod.t_rhs(P, v.p, v.q, v.t, tau, threads),
    }


def best_of(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def run(nhats, repeat, threads, max_iter):
    backends = kernels.available()
    results = []
    for nhat in nhats:
        truth, graph = gen_cube(CubeSpec(nhat, 0.3, 0.05, 0.2, seed=0))
        init = chordal_init(graph)
        v = SplitVariables.from_poses(init)
        P = graph.packed
        row = {"nhat": nhat, "n": graph.n, "m": graph.m, "kernels": {}, "solve": {}}
        for name in backends:
            mod = kernels.load(name)
            number = 20 if graph.n <= 200 else 5
            row["kernels"][name] = {
                k: best_of(fn, repeat, number) for k, fn in _calls(mod, P, v, threads).items()
            }
            params = admm.AdmmParams(max_iter=max_iter, tol=0.0, nthreads=threads, track=False)
            with use_backend(name):
                row["solve"][name] = best_of(lambda: admm.solve(graph, init, params), max(1, repeat // 2))
        results.append(row)
    return backends, results


def report(backends, results, out=sys.stdout):
    for row in results:
        out.write(f"\ncube nhat={row['nhat']} (n={row['n']}, m={row['m']})\n")
        out.write(f"{'kernel':<12}" + "".join(f"{b + ' [ms]':>16}" for b in backends))
        if len(backends) == 2:
            out.write(f"{'speedup':>10}")
        out.write("\n")
        names = list(KERNELS) + ["solve"]
        for k in names:
            if k == "solve":
                vals = [row["solve"][b] for b in backends]
                label = "admm solve"
            else:
                vals = [row["kernels"][b][k] for b in backends]
                label = k
            out.write(f"{label:<12}" + "".join(f"{1e3 * x:16.3f}" for x in vals))
            if len(vals) == 2:
                out.write(f"{vals[1] / vals[0]:10.1f}")
            out.write("\n")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--nhat", type=int, nargs="+", default=[5, 8])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=int(os.environ.get("PGO_THREADS", os.cpu_count() or 1)))
    ap.add_argument("--max-iter", type=int, default=50, help="ADMM iterations per timed solve")
    ap.add_argument("--json", help="also write raw timings here")
    args = ap.parse_args(argv)
    backends, results = run(args.nhat, args.repeat, args.threads, args.max_iter)
    if len(backends) < 2:
        print(f"only the {backends[0]} backend is available; build the extension to compare")
    print(f"threads={args.threads}, ADMM solve = {args.max_iter} iterations, best of {args.repeat}")
    report(backends, results)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"threads": args.threads, "backends": backends, "results": results}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
