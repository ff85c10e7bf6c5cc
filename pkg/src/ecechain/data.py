"""Quadruple datasets: loading, vocabularies and reciprocal queries."""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from functools import cached_property, reduce
from pathlib import Path
from typing import NamedTuple

import numpy as np

SPLITS = ("train", "valid", "test")
SPECIAL_TOKENS = ("[CLS]", "[MASK]")
UNKNOWN_TIME = "<unknown>"

# label -> step; "year" is calendar-based, None defers to the raw values
GRANULARITIES: dict[str, timedelta | str | None] = {
    "auto": None,
    "15 mins": timedelta(minutes=15),
    "1 hour": timedelta(hours=1),
    "24 hours": timedelta(days=1),
    "1 day": timedelta(days=1),
    "1 year": "year",
}

KNOWN_GRANULARITY = {
    "gdelt": "15 mins",
    "icews05-15": "24 hours",
    "icews18": "24 hours",
    "icews14": "24 hours",
    "yago11k": "1 year",
    "wikidata12k": "1 year",
}

_DATE_RE = re.compile(
    r"^(?P<y>-?\d{1,4}|#+)(?:-(?P<m>\d{1,2}|#+))?(?:-(?P<d>\d{1,2}|#+))?"
    r"(?:[ T](?P<H>\d{1,2}):(?P<M>\d{2})(?::(?P<S>\d{2}))?)?$"
)


class DatasetError(ValueError):
    """Malformed dataset file."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class Quadruple(NamedTuple):
    subject: int
    predicate: int
    object: int
    timestamp: int


class Query(NamedTuple):
    subject: int
    relation: int
    answer: int
    timestamp: int


@dataclass(frozen=True)
class Vocabularies:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    timestamps: tuple[str, ...]

    @property
    def entity_count(self) -> int:
        return len(self.entities)

    @property
    def relation_count(self) -> int:
        return len(self.relations)

    @property
    def time_count(self) -> int:
        return len(self.timestamps)

    @cached_property
    def entity_id(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.entities)}

    @cached_property
    def relation_id(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.relations)}

    @cached_property
    def time_id(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.timestamps)}

    def relation_name(self, rel: int) -> str:
        if rel >= self.relation_count:
            return self.relations[rel - self.relation_count] + "^-1"
        return self.relations[rel]

    # Token space shared by the input embedding table:
    # [entities | relations incl. reciprocals | timestamps | CLS, MASK]
    @property
    def relation_offset(self) -> int:
        return self.entity_count

    @property
    def time_offset(self) -> int:
        return self.entity_count + 2 * self.relation_count

    @property
    def cls_token(self) -> int:
        return self.time_offset + self.time_count

    @property
    def mask_token(self) -> int:
        return self.cls_token + 1

    @property
    def token_count(self) -> int:
        return self.mask_token + 1

    def digest(self) -> str:
        h = hashlib.sha256()
        for group in (self.entities, self.relations, self.timestamps):
            h.update("\x1f".join(group).encode())
            h.update(b"\x1e")
        return h.hexdigest()


@dataclass(frozen=True)
class DatasetSplit:
    """Train/valid/test quadruples as int64 arrays of shape (n, 4)."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    granularity: str = "auto"
    name: str = ""
    content_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __getitem__(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise KeyError(f"unknown split {split!r}; expected one of {SPLITS}")
        return getattr(self, split)

    @property
    def sizes(self) -> dict[str, int]:
        return {s: int(len(self[s])) for s in SPLITS}

    def quadruples(self, split: str) -> list[Quadruple]:
        return [Quadruple(*map(int, row)) for row in self[split]]

    def all_quadruples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])


# ----------------------------------------------------------------- loading


def _split_file(root: Path, split: str) -> Path:
    for name in (f"{split}.txt", f"{split}.tsv", split, f"{split}.del"):
        if (root / name).is_file():
            return root / name
    raise FileNotFoundError(f"no {split} file in {root}")


def _read_rows(path: Path) -> list[tuple[str, str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise DatasetError(
                    f"{path}:{lineno}: expected at least 4 tab-separated fields, got {len(parts)}"
                )
            rows.append(tuple(p.strip() for p in parts[:4]))
    return rows


def _is_int(text: str) -> bool:
    return bool(re.fullmatch(r"-?\d+", text))


def _parse_date(text: str, by_year: bool):
    m = _DATE_RE.match(text)
    if m is None or m["y"].startswith("#"):
        return None
    year = int(m["y"])
    if by_year:
        return year
    parts = [m[g] for g in ("m", "d")]
    if any(p is not None and p.startswith("#") for p in parts):
        return None
    try:
        return datetime(
            year, int(m["m"] or 1), int(m["d"] or 1),
            int(m["H"] or 0), int(m["M"] or 0), int(m["S"] or 0),
        )
    except ValueError:
        return None


def _discretize_times(raw: list[str], granularity: str) -> tuple[dict[str, int], list[str], dict]:
    """Map raw timestamp strings to dense indices on a regular timeline."""
    if granularity not in GRANULARITIES:
        raise ConfigError(
            f"unknown granularity {granularity!r}; expected one of {sorted(GRANULARITIES)}"
        )
    distinct = list(dict.fromkeys(raw))
    info: dict = {}
    if distinct and all(_is_int(t) for t in distinct):
        values = {t: int(t) for t in distinct}
        lo = min(values.values())
        step = reduce(math.gcd, (v - lo for v in values.values()), 0) or 1
        index = {t: (v - lo) // step for t, v in values.items()}
        n = max(index.values()) + 1
        names = [str(lo + i * step) for i in range(n)]
        info = {"time_mode": "integer", "time_origin": lo, "time_step": step}
    else:
        step = GRANULARITIES[granularity]
        by_year = step == "year" or (
            step is None and all(_DATE_RE.match(t) and _DATE_RE.match(t)["m"] is None for t in distinct)
        )
        if step is None:
            step = "year" if by_year else timedelta(days=1)
        parsed = {t: _parse_date(t, by_year) for t in distinct}
        known = [v for v in parsed.values() if v is not None]
        index = {}
        names = []
        if known:
            lo = min(known)
            if by_year:
                index = {t: v - lo for t, v in parsed.items() if v is not None}
                names = [str(lo + i) for i in range(max(index.values()) + 1)]
            else:
                index = {t: (v - lo) // step for t, v in parsed.items() if v is not None}
                names = [(lo + i * step).isoformat() for i in range(max(index.values()) + 1)]
            info = {"time_mode": "date", "time_origin": str(lo), "time_step": str(step)}
        if len(index) < len(distinct):
            unknown = len(names)
            names.append(UNKNOWN_TIME)
            for t, v in parsed.items():
                if v is None:
                    index[t] = unknown
            info["unknown_time_id"] = unknown
    return index, names, info


def _read_id_names(path: Path) -> dict[int, str]:
    names = {}
    if path.is_file():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip("\r\n").split("\t")
                if len(parts) >= 2 and _is_int(parts[1]):
                    names[int(parts[1])] = parts[0]
    return names


def _id_vocab(ids: list[int], names_file: Path) -> tuple[str, ...]:
    given = _read_id_names(names_file)
    n = max([*ids, *given.keys(), -1]) + 1
    return tuple(given.get(i, str(i)) for i in range(n))


def load_dataset(path, format: str = "auto", granularity: str | None = None):
    """Read ``train``/``valid``/``test`` quadruple files from ``path``.

    ``format`` is ``"ids"`` (integer subject/predicate/object columns),
    ``"names"`` (arbitrary strings, ids by first appearance) or ``"auto"``.
    Returns ``(DatasetSplit, Vocabularies)``.
    """
    root = Path(path)
    if granularity is None:
        granularity = KNOWN_GRANULARITY.get(root.name.lower(), "auto")
    if granularity not in GRANULARITIES:
        raise ConfigError(
            f"unknown granularity {granularity!r}; expected one of {sorted(GRANULARITIES)}"
        )
    if format not in ("auto", "ids", "names"):
        raise ConfigError(f"unknown dataset format {format!r}")

    files = {s: _split_file(root, s) for s in SPLITS}
    rows = {s: _read_rows(files[s]) for s in SPLITS}
    every = [r for s in SPLITS for r in rows[s]]

    if format == "auto":
        format = "ids" if all(_is_int(r[0]) and _is_int(r[1]) and _is_int(r[2]) for r in every) else "names"

    if format == "ids":
        try:
            ent_ids = [int(r[i]) for r in every for i in (0, 2)]
            rel_ids = [int(r[1]) for r in every]
        except ValueError as exc:
            raise DatasetError(f"non-integer id in {root}: {exc}") from None
        if any(i < 0 for i in ent_ids + rel_ids):
            raise DatasetError(f"negative id in {root}")
        entities = _id_vocab(ent_ids, root / "entity2id.txt")
        relations = _id_vocab(rel_ids, root / "relation2id.txt")
        ent_map = rel_map = None
    else:
        ent_map, rel_map = {}, {}
        for s, p, o, _ in every:
            ent_map.setdefault(s, len(ent_map))
            ent_map.setdefault(o, len(ent_map))
            rel_map.setdefault(p, len(rel_map))
        entities, relations = tuple(ent_map), tuple(rel_map)

    time_index, time_names, info = _discretize_times([r[3] for r in every], granularity)

    def encode(split_rows):
        out = np.zeros((len(split_rows), 4), dtype=np.int64)
        for i, (s, p, o, t) in enumerate(split_rows):
            if ent_map is None:
                out[i] = (int(s), int(p), int(o), time_index[t])
            else:
                out[i] = (ent_map[s], rel_map[p], ent_map[o], time_index[t])
        return out

    h = hashlib.sha256()
    for s in SPLITS:
        h.update(files[s].read_bytes())
    info["format"] = format
    split = DatasetSplit(
        *(encode(rows[s]) for s in SPLITS),
        granularity=granularity,
        name=root.name,
        content_hash=h.hexdigest(),
        extra=info,
    )
    return split, Vocabularies(entities, relations, tuple(time_names))


# ------------------------------------------------------------- reciprocals


def augment_reciprocal(quads: np.ndarray, vocabs: Vocabularies) -> np.ndarray:
    """Turn (s, p, o, t) rows into object queries in both directions.

    Returns a (2n, 4) array of (subject, relation, answer, time): the first
    n rows ask (s, p, ?, t), the next n ask (o, p + R, ?, t).
    """
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    n_rel = vocabs.relation_count
    if len(quads) and (quads[:, 1].max() >= n_rel or quads[:, 1].min() < 0):
        raise ValueError(
            f"relation ids must lie in the base range [0, {n_rel}); already augmented?"
        )
    s, p, o, t = quads.T
    forward = np.stack([s, p, o, t], axis=1)
    inverse = np.stack([o, p + n_rel, s, t], axis=1)
    return np.concatenate([forward, inverse])


def queries_as_tuples(queries: np.ndarray) -> list[Query]:
    return [Query(*map(int, row)) for row in queries]


# --------------------------------------------------------------- artefacts

VOCAB_FILES = {"entities": "entities.tsv", "relations": "relations.tsv", "timestamps": "timestamps.tsv"}


def write_vocabularies(vocabs: Vocabularies, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for attr, fname in VOCAB_FILES.items():
        with open(out / fname, "w", encoding="utf-8") as fh:
            for i, name in enumerate(getattr(vocabs, attr)):
                fh.write(f"{name}\t{i}\n")


def read_vocabularies(out_dir) -> Vocabularies:
    groups = {}
    for attr, fname in VOCAB_FILES.items():
        names = {}
        with open(Path(out_dir) / fname, encoding="utf-8") as fh:
            for line in fh:
                name, idx = line.rstrip("\n").rsplit("\t", 1)
                names[int(idx)] = name
        groups[attr] = tuple(names[i] for i in range(len(names)))
    return Vocabularies(**groups)


def build_manifest(split: DatasetSplit, vocabs: Vocabularies) -> dict:
    return {
        "dataset": split.name,
        "granularity": split.granularity,
        "entity_count": vocabs.entity_count,
        "relation_count": vocabs.relation_count,
        "time_count": vocabs.time_count,
        "split_sizes": split.sizes,
        "content_hash": split.content_hash,
        "vocab_hash": vocabs.digest(),
        **{k: v for k, v in split.extra.items()},
    }


def write_manifest(manifest: dict, out_dir) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
