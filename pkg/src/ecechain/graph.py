"""Chronological neighbour index and evolutionary-chain construction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .data import Vocabularies


class EventTriple(NamedTuple):
    entity: int
    predicate: int
    timestamp: int
    time_masked: bool = False


class ECE(NamedTuple):
    query_branch: EventTriple
    neighbor_branches: tuple[EventTriple, ...]
    answer: int
    answer_time: int


@dataclass(frozen=True)
class NeighborIndex:
    """CSR layout: events of entity ``e`` live in ``[indptr[e], indptr[e+1])``.

    Each slice is sorted by (timestamp, predicate, other entity).
    """

    indptr: np.ndarray
    entity: np.ndarray
    predicate: np.ndarray
    timestamp: np.ndarray

    @property
    def entity_count(self) -> int:
        return len(self.indptr) - 1

    def degree(self, e: int) -> int:
        return int(self.indptr[e + 1] - self.indptr[e])

    def __getitem__(self, e: int) -> list[EventTriple]:
        lo, hi = self.indptr[e], self.indptr[e + 1]
        return [
            EventTriple(int(a), int(b), int(c))
            for a, b, c in zip(self.entity[lo:hi], self.predicate[lo:hi], self.timestamp[lo:hi])
        ]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "indptr": self.indptr,
            "entity": self.entity,
            "predicate": self.predicate,
            "timestamp": self.timestamp,
        }


def build_index(train: np.ndarray, vocabs: Vocabularies) -> NeighborIndex:
    train = np.asarray(train, dtype=np.int64).reshape(-1, 4)
    s, p, o, t = train.T
    owner = np.concatenate([s, o])
    other = np.concatenate([o, s])
    pred = np.concatenate([p, p + vocabs.relation_count])
    time = np.concatenate([t, t])
    order = np.lexsort((other, pred, time, owner))
    indptr = np.zeros(vocabs.entity_count + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=vocabs.entity_count), out=indptr[1:])
    return NeighborIndex(
        indptr=indptr,
        entity=np.ascontiguousarray(other[order]),
        predicate=np.ascontiguousarray(pred[order]),
        timestamp=np.ascontiguousarray(time[order]),
    )


@dataclass
class ECEBatch:
    """A batch of chains in padded array form.

    ``nb_*`` have shape (B, k); only the first ``counts[b]`` slots of row
    ``b`` are real neighbours.
    """

    subject: np.ndarray
    relation: np.ndarray
    time: np.ndarray
    answer: np.ndarray
    masked: np.ndarray
    nb_entity: np.ndarray
    nb_relation: np.ndarray
    nb_time: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.subject)

    @property
    def k(self) -> int:
        return self.nb_entity.shape[1]

    def ece(self, i: int) -> ECE:
        n = int(self.counts[i])
        branches = tuple(
            EventTriple(int(e), int(r), int(t))
            for e, r, t in zip(self.nb_entity[i, :n], self.nb_relation[i, :n], self.nb_time[i, :n])
        )
        query = EventTriple(
            int(self.subject[i]), int(self.relation[i]), int(self.time[i]), bool(self.masked[i])
        )
        return ECE(query, branches, int(self.answer[i]), int(self.time[i]))


def draw_seeds(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64, endpoint=True)


def build_ece_batch(
    queries: np.ndarray,
    index: NeighborIndex,
    k: int,
    history_only: bool,
    masked=None,
    rng: np.random.Generator | None = None,
    seeds: np.ndarray | None = None,
    strict: bool = False,
) -> ECEBatch:
    """Build one chain per (subject, relation, answer, time) query row.

    Neighbour sampling is driven by one 64-bit seed per query, either given
    or drawn from ``rng``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    queries = np.ascontiguousarray(np.asarray(queries, dtype=np.int64).reshape(-1, 4))
    n = len(queries)
    if seeds is None:
        if rng is None:
            raise ValueError("either rng or seeds is required")
        seeds = draw_seeds(rng, n)
    masked = np.zeros(n, dtype=bool) if masked is None else np.asarray(masked, dtype=bool)
    cols = [np.ascontiguousarray(queries[:, i]) for i in range(4)]
    ent, rel, tim, counts = kernels.pack_ece_batch(
        index.indptr, index.entity, index.predicate, index.timestamp,
        cols[0], cols[1], cols[3], cols[2],
        np.ascontiguousarray(seeds, dtype=np.uint64), int(k), bool(history_only), bool(strict),
    )
    return ECEBatch(cols[0], cols[1], cols[3], cols[2], masked, ent, rel, tim, counts)


def build_ece(
    query,
    index: NeighborIndex,
    k: int,
    history_only: bool,
    mask_query_time: bool,
    rng: np.random.Generator,
    strict: bool = False,
) -> ECE:
    """Chain for a single ``(subject, relation, timestamp, answer)`` query."""
    s, p, t, a = query
    batch = build_ece_batch(
        np.array([[s, p, a, t]]), index, k, history_only, [mask_query_time], rng=rng, strict=strict
    )
    return batch.ece(0)


def mask_batch(batch_size: int, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Select round(gamma * batch_size) queries whose timestamp gets masked."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"masking rate must lie in [0, 1], got {gamma}")
    flags = np.zeros(batch_size, dtype=bool)
    m = int(np.floor(gamma * batch_size + 0.5))
    if m:
        flags[rng.choice(batch_size, size=m, replace=False)] = True
    return flags
