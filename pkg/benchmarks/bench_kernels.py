"""Time the compiled graph kernels against the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--nodes 10,20,50] [--repeats 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from casper import _pykernels
from casper.graph import generate_er

try:
    from casper import _kernels
except ImportError:
    _kernels = None


def _best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _cases(d, seed):
    truth = generate_er(d, 2, seed).adjacency.astype(np.uint8)
    est = generate_er(d, 2, seed + 1).adjacency.astype(np.uint8)
    return truth, est


def run(nodes, repeats):
    rows = []
    for d in nodes:
        truth, est = _cases(d, d)
        zmask = np.zeros(d, dtype=np.uint8)
        zmask[d // 2 :] = 1

        def dsep(mod):
            return lambda: [mod.d_separated(truth, i, j, zmask) for i in range(d) for j in range(d) if i != j]

        for name, make in (
            ("sid", lambda mod: (lambda: mod.sid_count(truth, est))),
            ("d-separation (all pairs)", dsep),
        ):
            py = _best(make(_pykernels), repeats)
            cy = _best(make(_kernels), repeats) if _kernels is not None else float("nan")
            rows.append((name, d, py, cy))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", default="10,20,50")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args(argv)
    nodes = [int(v) for v in args.nodes.split(",")]
    if _kernels is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':<26}{'d':>4}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for name, d, py, cy in run(nodes, args.repeats):
        print(f"{name:<26}{d:>4}{py:>12.4f}{cy:>12.4f}{py / cy:>10.1f}")


if __name__ == "__main__":
    main()
