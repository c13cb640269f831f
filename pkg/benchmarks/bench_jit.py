"""Compiled hot loops against their plain-Python fallbacks.

Each kernel runs twice on identical inputs and generator seeds: once through
the numba dispatcher and once through ``.py_func``. The script checks the
outputs agree and prints the timings. With MULTIMODAL_MCMC_DISABLE_JIT=1 set
both columns run the fallback.

    python3 benchmarks/bench_jit.py [--scale 1.0]
"""

import argparse
import time

import numpy as np

from multimodal_mcmc import _jit, _loops
from multimodal_mcmc.harness.data import synth_ice
from multimodal_mcmc.targets import AutologisticParams, bimodal_table


def _lattice(n):
    p = AutologisticParams(synth_ice(n, n, 0), 1.0, 0.7)
    return p.y_flat.astype(np.int64), p.nbrs, p.degree


def case_gibbs(fn, scale):
    y, nbrs, deg = _lattice(16)
    x = y.copy()
    fn(x, y, nbrs, deg, 1.0, 0.7, int(200 * scale), np.random.default_rng(1), np.zeros(0, np.int64))
    return x


def case_flip(fn, scale):
    y, nbrs, deg = _lattice(16)
    x = y.copy()
    n = int(200_000 * scale)
    out = np.empty(n)
    acc, lp = fn(x, 0.0, y, nbrs, deg, 1.0, 0.7, n, np.random.default_rng(2), np.zeros(0), np.zeros(0), out)
    return np.append(out, [acc, lp])


def case_tabular(fn, scale):
    lp = np.log(bimodal_table(16, 6.0).probabilities)
    counts = np.zeros(16, np.int64)
    fn(lp, 0, int(200_000 * scale), 2, False, np.random.default_rng(3), counts, np.zeros(0, np.int64))
    return counts


def case_ram(fn, scale):
    lp = np.log(bimodal_table(16, 6.0).probabilities)
    counts = np.zeros(16, np.int64)
    fn(lp, 0, int(50_000 * scale), 3, 10_000, np.random.default_rng(4), counts)
    return counts


CASES = {
    "gibbs_sweeps": (_loops.gibbs_sweeps, case_gibbs),
    "flip_chain": (_loops.flip_chain, case_flip),
    "tabular_rw_chain": (_loops.tabular_rw_chain, case_tabular),
    "ram_tabular_chain": (_loops.ram_tabular_chain, case_ram),
}


def timed(case, fn, scale):
    t0 = time.perf_counter()
    out = case(fn, scale)
    return out, time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    print(f"numba active: {_jit.JIT_ENABLED}")
    print(f"{'kernel':20s} {'compiled s':>11s} {'python s':>10s} {'speedup':>8s}  match")
    for name, (fn, case) in CASES.items():
        case(fn, 0.01)  # compile outside the timing
        a, tj = timed(case, fn, args.scale)
        b, tp = timed(case, fn.py_func, args.scale)
        print(f"{name:20s} {tj:11.4f} {tp:10.4f} {tp / tj:8.1f}  {np.array_equal(a, b)}")


if __name__ == "__main__":
    main()
