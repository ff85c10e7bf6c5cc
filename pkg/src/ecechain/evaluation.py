"""Ranking metrics under raw and time-aware filtered protocols."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import Vocabularies, augment_reciprocal
from .graph import NeighborIndex, build_ece_batch

PROTOCOLS = ("raw", "filtered")
TIE_POLICIES = ("mean", "optimistic", "pessimistic")
HITS_AT = (1, 3, 10)
PROTOCOL_NOTE = (
    "published scores do not state raw vs filtered ranking; "
    "filtered here means time-aware filtering over all splits"
)


def _combine(greater, ties, tie_policy: str):
    if tie_policy == "mean":
        return 1.0 + greater + ties / 2.0
    if tie_policy == "optimistic":
        return 1.0 + greater
    if tie_policy == "pessimistic":
        return 1.0 + greater + ties
    raise ValueError(f"unknown tie policy {tie_policy!r}; expected one of {TIE_POLICIES}")


def rank_target(scores, answer: int, known_true=(), tie_policy: str = "mean") -> float:
    """Rank of ``answer`` (1 = best) after dropping ``known_true`` minus the answer."""
    scores = np.asarray(scores)
    if not 0 <= answer < scores.shape[-1]:
        raise IndexError(f"answer {answer} out of range [0, {scores.shape[-1]})")
    filt = np.array(sorted(set(int(e) for e in known_true) - {int(answer)}), dtype=np.int64)
    greater, ties = kernels.count_ranks(
        scores.reshape(1, -1), np.array([answer], dtype=np.int64),
        np.array([0, len(filt)], dtype=np.int64), filt,
    )
    return float(_combine(greater, ties, tie_policy)[0])


def rank_batch(scores, answers, filt_indptr=None, filt_idx=None, tie_policy: str = "mean") -> np.ndarray:
    scores = np.asarray(scores)
    answers = np.ascontiguousarray(answers, dtype=np.int64)
    if filt_indptr is None:
        filt_indptr = np.zeros(len(answers) + 1, dtype=np.int64)
        filt_idx = np.zeros(0, dtype=np.int64)
    greater, ties = kernels.count_ranks(
        scores, answers, np.ascontiguousarray(filt_indptr, dtype=np.int64),
        np.ascontiguousarray(filt_idx, dtype=np.int64),
    )
    return _combine(greater, ties, tie_policy).astype(np.float64)


@dataclass
class MetricReport:
    mrr: float
    hits: dict[int, float]
    count: int
    by_direction: dict[str, "MetricReport"] = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"mrr": self.mrr, "count": self.count}
        out.update({f"hits@{k}": v for k, v in self.hits.items()})
        if self.by_direction:
            out["by_direction"] = {k: v.as_dict() for k, v in self.by_direction.items()}
        return out


def compute_metrics(ranks, hits_at=HITS_AT) -> MetricReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("cannot compute metrics over an empty rank list")
    return MetricReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits={k: float(np.mean(ranks <= k)) for k in hits_at},
        count=int(ranks.size),
    )


class FilterIndex:
    """Known answers for each (subject, relation, time) across all splits."""

    def __init__(self, quads: np.ndarray, vocabs: Vocabularies):
        known: dict[tuple[int, int, int], set[int]] = defaultdict(set)
        for s, r, a, t in augment_reciprocal(quads, vocabs).tolist():
            known[(s, r, t)].add(a)
        self._known = {key: np.array(sorted(v), dtype=np.int64) for key, v in known.items()}

    def known(self, subject: int, relation: int, time: int) -> np.ndarray:
        return self._known.get((subject, relation, time), np.zeros(0, dtype=np.int64))

    def csr(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lists = [self.known(s, r, t) for s, r, _, t in np.asarray(queries).tolist()]
        indptr = np.zeros(len(lists) + 1, dtype=np.int64)
        np.cumsum([len(x) for x in lists], out=indptr[1:])
        idx = np.concatenate(lists) if lists else np.zeros(0, dtype=np.int64)
        return indptr, idx.astype(np.int64)


def evaluate_queries(model, queries: np.ndarray, index: NeighborIndex, *, protocol: str = "filtered",
                     filters: FilterIndex | None = None, history_only: bool = True,
                     strict: bool = False, seed: int = 0, batch_size: int = 256,
                     tie_policy: str = "mean", mask_query_time: bool = False,
                     ) -> tuple[MetricReport, np.ndarray]:
    """Rank every query's answer; returns the report and the per-query ranks.

    Query timestamps stay visible unless ``mask_query_time``. Neighbour sampling uses its own seeded
    stream so repeated evaluation is reproducible.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if protocol == "filtered" and filters is None:
        raise ValueError("filtered protocol needs a FilterIndex")
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 4)
    rng = np.random.default_rng(seed)
    ranks = np.zeros(len(queries), dtype=np.float64)
    for lo in range(0, len(queries), batch_size):
        chunk = queries[lo:lo + batch_size]
        masked = np.full(len(chunk), mask_query_time)
        batch = build_ece_batch(chunk, index, model.config.k, history_only, masked, rng=rng, strict=strict)
        link, _ = model.scores(batch, with_time=False)
        if protocol == "filtered":
            indptr, idx = filters.csr(chunk)
            ranks[lo:lo + len(chunk)] = rank_batch(link.data, chunk[:, 2], indptr, idx, tie_policy)
        else:
            ranks[lo:lo + len(chunk)] = rank_batch(link.data, chunk[:, 2], tie_policy=tie_policy)
    report = compute_metrics(ranks)
    inverse = queries[:, 1] >= model.relation_count
    for name, sel in (("object", ~inverse), ("subject", inverse)):
        if sel.any():
            report.by_direction[name] = compute_metrics(ranks[sel])
    return report, ranks


def report_json(report: MetricReport, *, protocol: str, split: str, tie_policy: str,
                checkpoint_hash: str = "", extra: dict | None = None) -> str:
    body = {
        "protocol": protocol,
        "protocol_note": PROTOCOL_NOTE,
        "split": split,
        "tie_policy": tie_policy,
        "query_count": report.count,
        "checkpoint_sha256": checkpoint_hash,
        "metrics": report.as_dict(),
    }
    if extra:
        body.update(extra)
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def write_rank_dump(path, queries: np.ndarray, ranks: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subject\trelation\tanswer\ttime\trank\n")
        for (s, r, a, t), rank in zip(np.asarray(queries).tolist(), ranks.tolist()):
            fh.write(f"{s}\t{r}\t{a}\t{t}\t{rank:g}\n")
