"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--queries 20000] [--k 50]
"""
import argparse
import time

import numpy as np

from ecechain import _fallback
from ecechain.data import Vocabularies, augment_reciprocal
from ecechain.graph import build_index, draw_seeds

try:
    from ecechain import _kernels
except ImportError:
    _kernels = None


def random_graph(rng, entities, relations, times, n):
    quads = np.stack([
        rng.integers(0, entities, n), rng.integers(0, relations, n),
        rng.integers(0, entities, n), rng.integers(0, times, n),
    ], axis=1)
    vocabs = Vocabularies(tuple(map(str, range(entities))), tuple(map(str, range(relations))),
                          tuple(map(str, range(times))))
    return quads, vocabs


def timed(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--queries", type=int, default=20000)
    parser.add_argument("--k", type=int, default=50)
    parser.add_argument("--entities", type=int, default=2000)
    parser.add_argument("--facts", type=int, default=200000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    quads, vocabs = random_graph(rng, args.entities, 50, 365, args.facts)
    index = build_index(quads, vocabs)
    q = augment_reciprocal(quads[: args.queries // 2], vocabs)
    seeds = draw_seeds(rng, len(q))
    ece_args = (index.indptr, index.entity, index.predicate, index.timestamp,
                np.ascontiguousarray(q[:, 0]), np.ascontiguousarray(q[:, 1]),
                np.ascontiguousarray(q[:, 3]), np.ascontiguousarray(q[:, 2]),
                seeds, args.k, True, False)

    scores = rng.normal(size=(512, vocabs.entity_count))
    answers = rng.integers(0, vocabs.entity_count, 512)
    per_row = rng.integers(0, 20, 512)
    indptr = np.concatenate([[0], np.cumsum(per_row)]).astype(np.int64)
    idx = rng.integers(0, vocabs.entity_count, indptr[-1])
    rank_args = (scores, answers, indptr, idx)

    print(f"{'kernel':<16}{'python [s]':>12}{'cython [s]':>12}{'speed-up':>10}")
    for name, a in (("pack_ece_batch", ece_args), ("count_ranks", rank_args)):
        t_py, out_py = timed(getattr(_fallback, name), *a, repeat=1)
        if _kernels is None:
            print(f"{name:<16}{t_py:>12.4f}{'n/a':>12}{'':>10}")
            continue
        t_cy, out_cy = timed(getattr(_kernels, name), *a)
        same = all(np.array_equal(x, y) for x, y in zip(out_py, out_cy))
        print(f"{name:<16}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>9.1f}x" + ("" if same else "  MISMATCH"))


if __name__ == "__main__":
    main()
