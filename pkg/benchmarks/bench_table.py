#!/usr/bin/env python3
"""Benchmark the compiled benefit-table kernel against the NumPy fallback.

Builds the full benefit table (all 2^K - 1 coalitions) for a range of client
counts and reports the per-build wall time of each backend plus the speedup.

Usage: python benchmarks/bench_table.py [--kmin 8] [--kmax 12] [--repeats 5]
"""

import argparse
import time

import numpy as np

from fedcoal import _table_py
from fedcoal.affinity import AffinityGraph, all_coalitions
from fedcoal.params import TAU_NORM

try:
    from fedcoal import _table_cy
except ImportError:
    _table_cy = None


def kernel_args(k: int, rng: np.random.Generator):
    thetas = rng.standard_normal((k, 16))
    grads = rng.standard_normal((k, 16))
    counts = rng.integers(1, 40, size=k)
    graph = AffinityGraph.from_snapshots(thetas, grads, counts, 0.2)
    masks = np.array(
        [sum(1 << m for m in c) for c in all_coalitions(range(k))], dtype=np.int64
    )
    return (
        masks,
        graph.a,
        graph.b,
        graph.g_norms,
        graph.theta_norms,
        np.asarray(graph.sample_counts, dtype=np.float64),
        0.2,
        TAU_NORM,
    )


def best_time(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--kmin", type=int, default=8)
    parser.add_argument("--kmax", type=int, default=12)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'K':>3} {'coalitions':>10} {'python':>12} {'compiled':>12} {'speedup':>8}")
    for k in range(args.kmin, args.kmax + 1):
        kargs = kernel_args(k, rng)
        t_py = best_time(_table_py.benefits_for_masks, kargs, args.repeats)
        if _table_cy is None:
            print(f"{k:>3} {len(kargs[0]):>10} {t_py * 1e3:>10.2f}ms {'n/a':>12} {'n/a':>8}")
            continue
        t_cy = best_time(_table_cy.benefits_for_masks, kargs, args.repeats)
        out_py = _table_py.benefits_for_masks(*kargs)
        out_cy = _table_cy.benefits_for_masks(*kargs)
        assert np.allclose(out_py, out_cy, atol=1e-12), "backends disagree"
        print(
            f"{k:>3} {len(kargs[0]):>10} {t_py * 1e3:>10.2f}ms {t_cy * 1e3:>10.2f}ms "
            f"{t_py / t_cy:>7.1f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
