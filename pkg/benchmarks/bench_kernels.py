"""Time the compiled kernels against the numpy fallback on desk-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from scafds import _kernels_py as py

try:
    from scafds import _kernels as compiled
except ImportError:
    compiled = None


def cases(seed=0):
    rng = np.random.default_rng(seed)
    n, e, h = 1000, 20000, 4
    dst = np.sort(rng.integers(0, n, e)).astype(np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, dst + 1, 1)
    indptr = np.cumsum(indptr)
    scores = rng.normal(size=(e, h))
    rows = rng.normal(size=(e, 32))
    u = np.sort(rng.integers(0, 730, 60)).astype(np.int64)
    v = np.sort(rng.integers(0, 730, 60)).astype(np.int64)
    ranks = np.arange(2, 42, 2, dtype=np.int64)
    return {
        "scatter_add_rows": lambda k: k.scatter_add_rows(rows, dst, n),
        "segment_sum": lambda k: k.segment_sum(rows, indptr),
        "segment_softmax": lambda k: k.segment_softmax(scores, indptr),
        "cooccurrence_count": lambda k: k.cooccurrence_count(u, v, 90),
        "signed_rank_null_counts(n=20)": lambda k: k.signed_rank_null_counts(ranks),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<32}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<32}{t_py:>12.3f}{'-':>14}{'-':>10}")
            continue
        a, b = fn(py), fn(compiled)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12), name
        t_c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<32}{t_py:>12.3f}{t_c:>14.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
