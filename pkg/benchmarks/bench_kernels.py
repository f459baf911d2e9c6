"""Time the numba kernels against the reference path.

    python3 benchmarks/bench_kernels.py [--events N] [--repeat R]

The reference path is what runs under FLOWMINE_NUMBA=0: numpy for slicing
and bigram counts, plain Python for the sequential greedy replay.
"""
import argparse
import time

import numpy as np

from flowmine import _kernels
from flowmine.core import relation_matrix
from flowmine.evaluator import FlowAcceptor
from flowmine.scenarios import benchmark
from flowmine.synthgen import generate


def best_of(fn, args, repeat):
    fn(*args)  # warm-up; includes compilation on the first jit call
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _kernels.USE_NUMBA:
        raise SystemExit("numba path disabled (FLOWMINE_NUMBA=0); nothing to compare")

    cat, flows, cfg = benchmark("large-20", args.seed)
    events = np.array(generate(cfg).events, dtype=np.int64)
    events = np.resize(events, args.events)
    rel = relation_matrix(cat, "union")
    acc = FlowAcceptor.build(flows, cat.max_id + 1)
    greedy_args = (events, acc.succ, acc.is_end, acc.start_of)

    rows = [
        ("slice_labels", _kernels._slice_labels_numpy, _kernels._slice_labels_jit,
         (events, rel, 16)),
        ("bigram_counts", _kernels._bigram_numpy, _kernels._bigram_jit,
         (events, cat.max_id + 1)),
        ("greedy_replay", _kernels._greedy_loop, _kernels._greedy_jit, greedy_args),
    ]
    print(f"{args.events} events, best of {args.repeat}")
    print(f"{'kernel':<15} {'reference s':>12} {'numba s':>10} {'speedup':>8}")
    for name, ref, jit, fargs in rows:
        r = best_of(ref, fargs, args.repeat)
        j = best_of(jit, fargs, args.repeat)
        print(f"{name:<15} {r:>12.5f} {j:>10.5f} {r / j:>7.1f}x")


if __name__ == "__main__":
    main()
