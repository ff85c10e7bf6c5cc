"""Deterministic periodic temporal graph used for overfit and ablation checks.

Entities sit on a ring. Relation ``r`` links ``s`` to its ``(r+1)``-th
successor, and subject ``s`` uses relation ``r`` exactly at the steps where
``(s + t) % relations == r``, so every entity cycles through the relations
one step at a time. The train/valid/test split is by timestamp.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import DatasetSplit, Vocabularies


def periodic_quadruples(entities: int = 20, relations: int = 4, timestamps: int = 24) -> np.ndarray:
    rows = []
    for t in range(timestamps):
        for s in range(entities):
            r = (s + t) % relations
            rows.append((s, r, (s + r + 1) % entities, t))
    return np.array(rows, dtype=np.int64)


def periodic_dataset(entities: int = 20, relations: int = 4, timestamps: int = 24,
                     valid_steps: int = 3, test_steps: int = 3) -> tuple[DatasetSplit, Vocabularies]:
    quads = periodic_quadruples(entities, relations, timestamps)
    t = quads[:, 3]
    train_end = timestamps - valid_steps - test_steps
    split = DatasetSplit(
        train=quads[t < train_end],
        valid=quads[(t >= train_end) & (t < train_end + valid_steps)],
        test=quads[t >= train_end + valid_steps],
        granularity="auto",
        name="periodic",
    )
    vocabs = Vocabularies(
        tuple(f"e{i}" for i in range(entities)),
        tuple(f"r{i}" for i in range(relations)),
        tuple(str(i) for i in range(timestamps)),
    )
    return split, vocabs


def write_periodic(out_dir, **kwargs) -> Path:
    """Write the periodic graph as name-format train/valid/test files."""
    split, vocabs = periodic_dataset(**kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        with open(out / f"{name}.txt", "w", encoding="utf-8") as fh:
            for s, p, o, t in split[name].tolist():
                fh.write(f"{vocabs.entities[s]}\t{vocabs.relations[p]}\t{vocabs.entities[o]}\t{t}\n")
    return out
