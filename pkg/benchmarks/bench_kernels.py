"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--length 32]

Each workload runs once per path to warm up (numba compiles on first
call), then ``--repeat`` times; the best wall time is reported. Results
from both paths are checked for equality before timing.
"""

import argparse
import time

import numpy as np

from immunekit import _kernels


def workloads(length, rng):
    def pats(n, width=length):
        return rng.integers(0, 2, size=(n, width), dtype=np.uint8)

    small = min(length, 16)
    a1, b1 = pats(2000), pats(500)
    cands, selfs = pats(20000), pats(64)
    space, dets = _kernels.universe(small), pats(200, small)
    return [
        ("affinity hamming 2000x500", lambda: _kernels.affinity_matrix(a1, b1, _kernels.HAMMING)),
        ("affinity contiguous 2000x500", lambda: _kernels.affinity_matrix(a1, b1, _kernels.CONTIGUOUS)),
        (f"censor 20000 candidates vs 64 self (r={length // 3})",
         lambda: _kernels.match_any(cands, selfs, _kernels.CONTIGUOUS, length // 3)),
        (f"coverage 2^{small} universe vs 200 detectors",
         lambda: _kernels.match_any(space, dets, _kernels.CONTIGUOUS, small // 2)),
    ]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--length", type=int, default=32, help="bit-string length")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'workload':48s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, fn in workloads(args.length, rng):
        timings, results = {}, {}
        for path, flag in (("numpy", False), ("numba", True)):
            _kernels.USE_NUMBA = flag
            results[path] = fn()
            timings[path] = best_of(fn, args.repeat)
        assert np.array_equal(results["numpy"], results["numba"]), name
        speedup = timings["numpy"] / timings["numba"]
        print(f"{name:48s} {timings['numpy'] * 1e3:9.2f}ms {timings['numba'] * 1e3:9.2f}ms {speedup:7.1f}x")


if __name__ == "__main__":
    main()
