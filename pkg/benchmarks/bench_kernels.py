#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run from the repository root:

    python benchmarks/bench_kernels.py

The same switch users have (FAIRPANEL_NO_NUMBA=1) selects the numpy path at
import time; here both variants are imported explicitly and timed on
identical inputs.
"""

import time

import numpy as np

from fairpanel import kernels
from fairpanel.numerics import TOL


def timeit(fn, *args, repeat=5, prepare=None):
    best = float("inf")
    for _ in range(repeat):
        ready = prepare() if prepare else args
        t0 = time.perf_counter()
        fn(*ready)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_nullspace(rng):
    print("\nnullspace_first_basis (26 x n, dense random)")
    for n in (200, 800, 1715):
        A = rng.normal(size=(26, n))
        args = (A.copy(), TOL.pivot)
        t_np = timeit(kernels.nullspace_first_basis_numpy, *args)
        row = f"  n={n:5d}   numpy {t_np*1e3:8.2f} ms"
        if kernels.NUMBA_ENABLED:
            kernels.nullspace_first_basis_jit(A.copy(), TOL.pivot)  # compile
            t_nb = timeit(kernels.nullspace_first_basis_jit, *args)
            row += f"   numba {t_nb*1e3:8.2f} ms   speedup {t_np/t_nb:5.1f}x"
        print(row)


def bf_instance(rng, n, n_pairs, k):
    assign = rng.integers(0, n_pairs, size=n)
    M = np.zeros((1 + n_pairs, n))
    M[0] = 1.0
    M[1 + assign, np.arange(n)] = 1.0
    while True:
        raw = rng.uniform(0.05, 1.0, n)
        pi = k * raw / raw.sum()
        if pi.max() <= 1.0:
            return M, pi


def bench_bf(rng):
    print("\nbf_core (one full rounding pass)")
    for n, n_pairs, k in ((100, 8, 10), (500, 25, 40), (1715, 25, 110)):
        M, pi = bf_instance(rng, n, n_pairs, k)
        c = rng.normal(size=n)

        def prep():
            return (M.copy(), pi.copy(), c, True, 6, TOL.snap, 1e-12, TOL.pivot)

        t_np = timeit(kernels.bf_core_numpy, prepare=prep, repeat=3)
        row = f"  n={n:5d}   numpy {t_np*1e3:8.1f} ms"
        if kernels.NUMBA_ENABLED:
            kernels.bf_core_jit(*prep())  # compile
            t_nb = timeit(kernels.bf_core_jit, prepare=prep, repeat=3)
            row += f"   numba {t_nb*1e3:8.1f} ms   speedup {t_np/t_nb:5.1f}x"
        print(row)


def bench_mle(rng):
    print("\nmle_value_grad (one objective+gradient evaluation)")
    for m, d, n_params in ((5_000, 3, 9), (50_000, 7, 26), (200_000, 7, 26)):
        idx = np.zeros((m, d), dtype=np.int64)
        for t in range(1, d):
            idx[:, t] = rng.integers(1 + (t - 1) * 3, 1 + t * 3, size=m)
        idx = np.minimum(idx, n_params - 1)
        z = (rng.random(m) < 0.3).astype(np.float64)
        w = rng.uniform(0.5, 1.5, m)
        theta = -rng.uniform(0.0, 2.0, n_params)
        grad = np.zeros(n_params)
        args = (idx, z, w, 0.5, theta, grad)
        t_np = timeit(kernels.mle_value_grad_numpy, *args)
        row = f"  rows={m:7d}   numpy {t_np*1e3:8.2f} ms"
        if kernels.NUMBA_ENABLED:
            kernels.mle_value_grad_jit(*args)  # compile
            t_nb = timeit(kernels.mle_value_grad_jit, *args)
            row += f"   numba {t_nb*1e3:8.2f} ms   speedup {t_np/t_nb:5.1f}x"
        print(row)


def main():
    print(f"numba enabled: {kernels.NUMBA_ENABLED}")
    rng = np.random.default_rng(0)
    bench_nullspace(rng)
    bench_bf(rng)
    bench_mle(rng)


if __name__ == "__main__":
    main()
