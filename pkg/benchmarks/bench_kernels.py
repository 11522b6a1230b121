"""Time every kernel on the numba path and on the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--windows 2000]

Results of the two paths are compared before timing.
"""
import argparse
import os
import time

import numpy as np

from harlm import kernels
from harlm.features import _power


def _timed(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(n_windows, rng):
    batch = rng.normal(size=(n_windows, 200, 9))
    power = _power(batch, None)
    X = rng.normal(size=(4000, 63))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(np.int64) + (X[:, 2] > 1).astype(np.int64)
    idx = np.arange(X.shape[0], dtype=np.int64)
    feats = rng.permutation(63).astype(np.int64)
    # a fixed random tree of depth 10 for tree_apply
    n_int = 2**10 - 1
    left = np.full(2 * n_int + 1, -1, dtype=np.int64)
    right = np.full(2 * n_int + 1, -1, dtype=np.int64)
    left[:n_int] = 2 * np.arange(n_int) + 1
    right[:n_int] = 2 * np.arange(n_int) + 2
    feature = rng.integers(0, 63, size=left.size).astype(np.int64)
    threshold = rng.normal(size=left.size)
    Y = np.where(rng.random((4000, 6)) < 0.2, 1.0, -1.0)
    order = rng.permutation(4000).astype(np.int64)

    def sgd():
        W = np.zeros((6, 63))
        b = np.zeros(6)
        kernels.hinge_sgd(X, Y, W, b, order, 1e-4, 0.01)
        return W, b

    return {
        "time_stats": lambda: kernels.time_stats(batch),
        "freq_stats": lambda: kernels.freq_stats(power, 0.25, 0.25, 3.0),
        "best_split": lambda: kernels.best_split(X, y, idx, 3, feats, 8),
        "tree_apply": lambda: kernels.tree_apply(feature, threshold, left, right, X),
        "hinge_sgd": sgd,
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--windows", type=int, default=2000)
    args = ap.parse_args()
    cases = _cases(args.windows, np.random.default_rng(0))

    results = {}
    for mode, flag in (("numba", "0"), ("numpy", "1")):
        os.environ["HARLM_DISABLE_NUMBA"] = flag
        for name, fn in cases.items():
            out = fn()  # warm-up (and JIT compile)
            results[(mode, name)] = (out, _timed(fn, args.repeat))
    os.environ.pop("HARLM_DISABLE_NUMBA", None)

    print(f"{'kernel':<12} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8}  agree")
    for name in cases:
        out_nb, t_nb = results[("numba", name)]
        out_np, t_np = results[("numpy", name)]
        print(f"{name:<12} {t_nb * 1e3:11.2f} {t_np * 1e3:11.2f} {t_np / t_nb:8.1f}x  {_same(out_nb, out_np)}")


if __name__ == "__main__":
    main()
