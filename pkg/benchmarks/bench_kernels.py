"""Compare the JIT kernels against their pure-numpy fallbacks.

Runs every kernel pair from morpheus._kernels.PAIRS on representative
workloads, checks that both paths agree, and prints per-kernel timings.
With MORPHEUS_DISABLE_NUMBA=1 (or without numba installed) only the numpy
path is timed.

    python benchmarks/bench_kernels.py [--repeats N] [--scale F]
"""

import argparse
import time

import numpy as np

from morpheus._kernels import NUMBA_ENABLED, PAIRS


def _tree_arrays(depth: int, n_features: int, rng):
    """Complete binary tree of the given depth in parallel-array form."""
    n_nodes = 2 ** (depth + 1) - 1
    first_leaf = 2**depth - 1
    feature = np.full(n_nodes, -1, dtype=np.int64)
    threshold = np.zeros(n_nodes)
    left = np.zeros(n_nodes, dtype=np.int64)
    right = np.zeros(n_nodes, dtype=np.int64)
    value = rng.normal(size=n_nodes)
    for i in range(first_leaf):
        feature[i] = int(rng.integers(0, n_features))
        threshold[i] = float(rng.normal())
        left[i] = 2 * i + 1
        right[i] = 2 * i + 2
    return feature, threshold, left, right, value


def build_workloads(scale: float, rng):
    """(name, args, loops) per kernel; loops batches sub-millisecond calls."""
    n = int(2000 * scale)
    x = rng.normal(size=n)
    y = 0.6 * x + rng.normal(size=n)

    counts = rng.integers(0, 40, size=(15, 15)).astype(np.float64)
    fine = rng.integers(0, 25, size=(30, 15)).astype(np.float64)

    m = int(5000 * scale)
    X = rng.normal(size=(m, 12))
    yr = X @ rng.normal(size=12) + 0.1 * rng.normal(size=m)

    tree = _tree_arrays(8, 12, rng)
    Xq = rng.normal(size=(int(20000 * scale), 12))

    tr = rng.normal(size=(int(3000 * scale), 8))
    ty = rng.normal(size=tr.shape[0])
    q = rng.normal(size=(int(500 * scale), 8))

    return [
        ("kendall_tau_b", (x, y), 1),
        ("distance_correlation", (x[: int(1500 * scale)], y[: int(1500 * scale)]), 1),
        ("mi_from_counts", (counts,), 2000),
        ("greedy_merge_mi", (fine, 8), 200),
        ("best_split", (X, yr, 20), 1),
        ("tree_predict", (*tree, Xq), 10),
        ("knn_predict", (tr, ty, q, 10), 1),
    ]


def _time(fn, args, loops: int, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(u, v) for u, v in zip(a, b))
    return bool(np.allclose(a, b, rtol=1e-9, atol=1e-9))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats, best kept")
    parser.add_argument("--scale", type=float, default=1.0, help="workload size multiplier")
    args = parser.parse_args()

    rng = np.random.default_rng(1234)
    workloads = build_workloads(args.scale, rng)

    print(f"numba kernels {'enabled' if NUMBA_ENABLED else 'DISABLED (numpy fallback only)'}")
    header = f"{'kernel':<22} {'numpy':>10} {'numba':>10} {'speedup':>8}  agree"
    print(header)
    print("-" * len(header))
    for name, call_args, loops in workloads:
        np_fn, jit_fn = PAIRS[name]
        t_np = _time(np_fn, call_args, loops, args.repeats)
        if jit_fn is None:
            print(f"{name:<22} {1e3 * t_np:>8.3f}ms {'-':>10} {'-':>8}  -")
            continue
        jit_fn(*call_args)  # compile outside the timed region
        t_jit = _time(jit_fn, call_args, loops, args.repeats)
        ok = _agree(np_fn(*call_args), jit_fn(*call_args))
        print(
            f"{name:<22} {1e3 * t_np:>8.3f}ms {1e3 * t_jit:>8.3f}ms "
            f"{t_np / t_jit:>7.1f}x  {ok}"
        )


if __name__ == "__main__":
    main()
