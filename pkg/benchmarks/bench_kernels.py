#!/usr/bin/env python3
"""Benchmark the eikonal kernel backends against each other.

The backend is frozen at import time from GRUSHIN_LAB_BACKEND, so this
script re-executes itself once per backend and prints a small table.

    python benchmarks/bench_kernels.py            # both backends
    GRUSHIN_LAB_BACKEND=numpy python benchmarks/bench_kernels.py --single
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def run_single(points, repeats):
    from grushin_lab import Grid, GridSpec
    from grushin_lab import _kernels
    from grushin_lab.metric import cc_distance, euclidean_distance_field

    results = []
    for alpha in (0.0, 1.0):
        grid = Grid(GridSpec(1, 1, alpha, 2.0, points))
        cc_distance(grid, (0.0, 0.0))  # warm-up (jit compilation)
        t0 = time.perf_counter()
        for i in range(repeats):
            src = (0.4 * np.cos(i), 0.4 * np.sin(i))
            field = cc_distance(grid, src)
        elapsed = (time.perf_counter() - t0) / repeats
        check = ""
        if alpha == 0.0:
            oracle = euclidean_distance_field(grid, field.source)
            err = float(np.max(np.abs(field.values.values
                                      - oracle.values.values)))
            check = f"max err vs straight-line {err:.4f}"
        results.append((alpha, elapsed, field.rounds, check))
    print(f"backend={_kernels.backend_name()} points={points}x{points}")
    for alpha, elapsed, rounds, check in results:
        print(f"  alpha={alpha:3.1f}: {elapsed * 1e3:8.2f} ms/solve "
              f"(passes={rounds}) {check}")
    return 0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--points", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--single", action="store_true",
                        help="run only the backend selected by the env")
    args = parser.parse_args()
    if args.single:
        return run_single(args.points, args.repeats)
    for backend in ("numba", "numpy"):
        env = dict(os.environ, GRUSHIN_LAB_BACKEND=backend)
        subprocess.run(
            [sys.executable, __file__, "--single",
             "--points", str(args.points), "--repeats", str(args.repeats)],
            env=env,
            check=True,
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
