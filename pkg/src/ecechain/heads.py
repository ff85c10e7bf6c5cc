"""Entity / timestamp scoring against the tied input table, and the joint loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import ConfigError


def score_rows(u: Tensor, table: Tensor) -> Tensor:
    """Dot product of each representation with each table row."""
    if u.ndim == 1:
        return ag.reshape(ag.reshape(u, (1, -1)) @ ag.transpose(table), (table.shape[0],))
    return u @ ag.transpose(table)


def score_entities(u: Tensor, semantic: Tensor, entity_count: int) -> Tensor:
    return score_rows(u, ag.index(semantic, slice(0, entity_count)))


def score_timestamps(u: Tensor, semantic: Tensor, time_offset: int, time_count: int) -> Tensor:
    return score_rows(u, ag.index(semantic, slice(time_offset, time_offset + time_count)))


@dataclass
class LossTerms:
    total: Tensor
    link_loss: float
    time_loss: float
    lam: float


def combined_loss(link_scores: Tensor, answers, time_scores: Tensor | None = None,
                  answer_times=None, masked=None, lam: float = 1.0) -> LossTerms:
    """Cross-entropy for links plus ``lam`` times cross-entropy for masked times.

    Per-query terms are averaged over the batch; unmasked queries contribute
    no time loss.
    """
    if lam < 0:
        raise ConfigError(f"time-loss weight must be non-negative, got {lam}")
    link = ag.cross_entropy(link_scores, answers)
    total, time_value = link, 0.0
    if time_scores is not None:
        n = 1 if time_scores.ndim == 1 else time_scores.shape[0]
        flags = np.ones(n, dtype=bool) if masked is None else np.atleast_1d(np.asarray(masked, dtype=bool))
        if flags.any():
            time_term = ag.cross_entropy(time_scores, answer_times, weights=flags.astype(time_scores.dtype))
            time_value = time_term.item()
            if lam > 0:
                total = link + ag.scale(time_term, lam)
    return LossTerms(total=total, link_loss=link.item(), time_loss=time_value, lam=lam)
