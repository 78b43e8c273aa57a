#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Run from a checkout:

    python benchmarks/bench_backends.py [--batch 512] [--dim 64] [--repeats 20]

The first numba call includes JIT compilation; a warm-up round is timed
out of band so the table shows steady-state numbers.
"""

import argparse
import time

import numpy as np

from infosieve import _kernels as K
from infosieve.backend import use_numba


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--clusters", type=int, default=16)
    ap.add_argument("--assign-size", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    a = rng.normal(size=(args.batch, args.dim))
    b = rng.normal(size=(args.batch, args.dim))
    cents = rng.normal(size=(args.clusters, args.dim))
    cost = rng.normal(size=(args.assign_size, args.assign_size))
    dist = K._np_pairwise_dist(a, b)
    gout = rng.normal(size=dist.shape)

    cases = [
        (f"pairwise_dist {args.batch}x{args.dim}",
         lambda: K._np_pairwise_dist(a, b),
         lambda: K.pairwise_dist(a, b)),
        (f"pairwise_dist_grad {args.batch}x{args.dim}",
         lambda: K._np_pairwise_dist_grad(a, b, dist, gout),
         lambda: K.pairwise_dist_grad(a, b, dist, gout)),
        (f"nearest_centroid {args.batch}x{args.dim} K={args.clusters}",
         lambda: K._np_nearest_centroid(a, cents),
         lambda: K.nearest_centroid(a, cents)),
        (f"hungarian {args.assign_size}x{args.assign_size}",
         lambda: K._np_hungarian_square(cost),
         lambda: K.hungarian_square(cost)),
    ]

    if not use_numba():
        print("numba backend inactive (INFOSIEVE_BACKEND=numpy or numba missing); "
              "timing the numpy flavour only.\n")

    print(f"{'kernel':44s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, np_fn, active_fn in cases:
        if use_numba():
            active_fn()  # warm-up: JIT compile before timing
        t_np = timeit(np_fn, args.repeats)
        if use_numba():
            t_nb = timeit(active_fn, args.repeats)
            print(f"{name:44s} {t_np*1e3:9.3f}ms {t_nb*1e3:9.3f}ms {t_np/t_nb:7.1f}x")
        else:
            print(f"{name:44s} {t_np*1e3:9.3f}ms {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
