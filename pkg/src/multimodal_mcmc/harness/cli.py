"""Command-line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import ConfigError
from .data import GridFormatError


def _cmd_run(args) -> int:
    from .experiments import run_experiment
    out = run_experiment(args.config, args.output)
    manifest = json.loads((Path(out) / "manifest.json").read_text())
    print(f"wrote {out} (hash {manifest['hash']})")
    return 0


def _cmd_benchmark(args) -> int:
    from . import experiments as ex
    out = Path(args.output)
    if args.which == "mixture":
        dims = tuple(int(d) for d in args.dims.split(","))
        samplers = tuple(args.samplers.split(","))
        res = ex.mixture_benchmark(out, dims, samplers, args.replicates, args.scale, args.seed)
        for r in res:
            print(f"{r.sampler:5s} d={r.dimension:3d} seed={r.replicate} rmse/sqrt(d)={r.rmse:.4f} "
                  f"time={r.seconds:.1f}s")
    elif args.which == "ising":
        s = ex.ising_benchmark(out, args.size, args.n_iter, grid=args.grid, seed=args.seed)
        print(json.dumps(s, indent=2, default=float))
    else:
        s = ex.sur_benchmark(out, args.seed, args.n_iter)
        print(f"maxima={s['n_maxima']} stationary={s['n_stationary']} igls_converged={s['igls_converged']} "
              f"occupancy={[round(float(v), 3) for v in s['apt_basin_occupancy']]}")
    return 0


def _cmd_plot(args) -> int:
    from .plots import emit_plots
    d = Path(args.results)
    path = d / "results.csv"
    if not path.exists():
        print(f"no results.csv in {d}", file=sys.stderr)
        return 1
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for p in emit_plots(rows, d):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multimodal-mcmc", description="Samplers for multimodal targets.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment described by an INI config")
    r.add_argument("config")
    r.add_argument("-o", "--output", default=None, help="override experiment.output_dir")
    r.set_defaults(func=_cmd_run)
    b = sub.add_parser("benchmark", help="desk-scale benchmark suites")
    b.add_argument("which", choices=["mixture", "ising", "sur"])
    b.add_argument("-o", "--output", default="results")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--dims", default="2,4,8,16")
    b.add_argument("--samplers", default="rwm,apt,pawl,jams")
    b.add_argument("--replicates", type=int, default=3)
    b.add_argument("--scale", type=float, default=1.0, help="multiplier on the per-sampler budgets")
    b.add_argument("--size", type=int, default=40, help="ising lattice side")
    b.add_argument("--grid", default=None, help="ising: path to a 0/1 grid")
    b.add_argument("--n-iter", type=int, default=None)
    b.set_defaults(func=_cmd_benchmark)
    p = sub.add_parser("plot", help="redraw figures from a results directory")
    p.add_argument("results")
    p.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "benchmark" and args.n_iter is None:
        args.n_iter = 200_000 if args.which == "ising" else 30_000
    try:
        return args.func(args)
    except (ConfigError, GridFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
