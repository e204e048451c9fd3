"""Timing comparison of the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--n 1000] [--iterations 4000]
Prints best-of-``--reps`` wall times plus the speedup over the fallback.
"""
import argparse
import time

import numpy as np

from netgps import _speedups_py

BACKENDS = {"python": _speedups_py}
try:
    from netgps import _speedups

    BACKENDS["cython"] = _speedups
except ImportError:
    pass


def best_of(fn, *args, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--iterations", type=int, default=4000)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, p, T = args.n, 7, args.iterations
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    trials = rng.integers(1, 12, n).astype(float)
    k = rng.binomial(trials.astype(int), 0.4).astype(float)
    chain_args = (X, k, trials, np.zeros(p), np.eye(p) / 100.0, np.zeros(p),
                  rng.standard_normal((T, p)), np.log(rng.random(T)),
                  T // 2, 0.234, 0.6, 2.38 / np.sqrt(p), 25)

    pts = rng.normal(size=(n, 3))
    knots = rng.normal(size=(35, 3))
    whiten = rng.normal(size=(35, 30))

    rows = []
    for name, impl in BACKENDS.items():
        rows.append((f"binomial_rw_chain[n={n},T={T}]", name,
                     best_of(impl.binomial_rw_chain, *chain_args,
                             reps=args.reps)))
        rows.append((f"tps_design[n={n},K=35,d=3]", name,
                     best_of(impl.tps_design, pts, knots, 2, whiten,
                             reps=args.reps)))

    width = max(len(r[0]) for r in rows)
    baseline = {}
    for kernel, name, sec in rows:
        baseline.setdefault(kernel, sec)
        print(f"{kernel:<{width}}  {name:<7} {sec * 1e3:9.2f} ms"
              f"   x{baseline[kernel] / sec:5.2f}")


if __name__ == "__main__":
    main()
