"""Compare the compiled and pure-Python hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and backend, plus the speedup.
"""

import argparse
import time

import numpy as np

from farsim import _kernels_py

try:
    from farsim import _kernels
except ImportError:
    _kernels = None


def cache_trace(mod, lines):
    c = mod.SetAssocLRU(1024, 16)
    for i, ln in enumerate(lines):
        c.access(int(ln), i & 3 == 0)
    return c.count


def fetch_count(mod, lines):
    return mod.lru_fetch_count(lines, 8192)


def segment_sum(mod, graph):
    offsets, targets, values = graph
    return mod.segment_sum_f32(offsets, targets, values)


def best(fn, repeat):
    t = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        t = min(t, time.perf_counter() - t0)
    return t


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=200_000)
    args = ap.parse_args()

    rng = np.random.default_rng(1)
    lines = rng.zipf(1.3, args.n).astype(np.int64) % (1 << 20)
    deg = rng.integers(0, 32, args.n // 16)
    offsets = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
    targets = rng.integers(0, len(deg), offsets[-1]).astype(np.int64)
    values = rng.random(len(deg), dtype=np.float32)

    cases = {
        "SetAssocLRU.access": lambda m: cache_trace(m, lines),
        "lru_fetch_count": lambda m: fetch_count(m, lines),
        "segment_sum_f32": lambda m: segment_sum(m, (offsets, targets, values)),
    }
    print(f"{'kernel':<20} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for name, case in cases.items():
        tp = best(lambda: case(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:<20} {tp:>10.4f} {'n/a':>10} {'n/a':>8}")
            continue
        a, b = case(_kernels_py), case(_kernels)
        assert np.array_equal(a, b), name
        tc = best(lambda: case(_kernels), args.repeat)
        print(f"{name:<20} {tp:>10.4f} {tc:>10.4f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
