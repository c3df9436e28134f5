#!/usr/bin/env python3
"""Throughput comparison of the compiled and pure-numpy vote kernels.

Run:  python3 benchmarks/bench_kernels.py [--n 1000000] [--repeats 5]

Times the fused Cython kernel against the vectorized numpy fallback on the
two built-in classifier kinds and on raw noise generation, and verifies the
outputs agree bit for bit while at it.
"""

import argparse
import time

import numpy as np

from certsmooth import _kernels_py

try:
    from certsmooth import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=1_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    n = args.n

    rng = np.random.default_rng(0)
    w = rng.normal(size=(10, 2))
    b = rng.normal(size=10)
    x = rng.normal(size=2)
    boundaries = (np.linspace(-2, 2, 9), np.linspace(-2, 2, 9))
    labels = rng.integers(0, 4, size=(10, 10)).astype(np.int64)
    strides = np.array([s // labels.itemsize for s in labels.strides], dtype=np.int64)

    cases = {
        "normal rows (n x 2)": lambda mod: mod.standard_normal_rows(1, 0, 0.5, 0, n, 2),
        "linear votes (C=10)": lambda mod: mod.count_votes_linear(
            1, 0, 0.5, 0, x, w, b, n),
        "grid votes (8x8)": lambda mod: mod.count_votes_grid(
            1, 0, 0.5, 0, x, boundaries, labels.reshape(-1), strides, 4, n),
    }

    print(f"n = {n:,} draws, best of {args.repeats}")
    print(f"{'kernel':24s} {'python':>10s} {'cython':>10s} {'speedup':>9s}")
    for name, call in cases.items():
        t_py, out_py = best_of(lambda: call(_kernels_py), args.repeats)
        if _kernels is None:
            print(f"{name:24s} {t_py * 1e3:9.1f}ms {'n/a':>10s}")
            continue
        t_cy, out_cy = best_of(lambda: call(_kernels), args.repeats)
        if not np.array_equal(np.asarray(out_py), np.asarray(out_cy)):
            raise SystemExit(f"backend mismatch in {name!r}")
        print(f"{name:24s} {t_py * 1e3:9.1f}ms {t_cy * 1e3:9.1f}ms {t_py / t_cy:8.2f}x")
    if _kernels is None:
        print("compiled backend unavailable; install with a C toolchain to compare")


if __name__ == "__main__":
    main()
