"""Benchmark the numba block kernels against the pure-numpy einsum path.

Run:  python benchmarks/bench_kernels.py
The same kernels power scoring, candidate sweeps, and gradients; shapes
below mirror typical workloads (arity n, M segments, batch B, dim d).
"""

import time

import numpy as np

from narytd import kernels

CASES = [
    # (arity, M, d, B)
    (2, 2, 64, 256),
    (2, 4, 128, 256),
    (3, 4, 128, 128),
    (4, 4, 128, 64),
    (2, 2, 16, 2048),
]

REPEAT = 20


def timeit(fn, *args):
    fn(*args)  # warm (JIT compile / einsum path cache)
    start = time.perf_counter()
    for _ in range(REPEAT):
        fn(*args)
    return (time.perf_counter() - start) / REPEAT


def main():
    rng = np.random.default_rng(0)
    print(f"{'case':<24}{'kernel':<10}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for n, M, d, B in CASES:
        m = min(n, M)
        ds = d // M
        P = n + 1
        codes = rng.choice([-1.0, 0.0, 1.0], size=m**P)
        X = rng.normal(size=(B, P, m, ds))
        label = f"n={n} M={M} d={d} B={B}"

        t_nb = timeit(kernels._score_nb, codes, X)
        t_np = timeit(kernels._score_np, codes, X)
        print(f"{label:<24}{'score':<10}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")

        t_nb = timeit(kernels._context_nb, codes, X, 1)
        t_np = timeit(kernels._context_np, codes, X, 1)
        print(f"{label:<24}{'context':<10}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
