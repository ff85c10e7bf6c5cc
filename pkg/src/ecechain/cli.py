"""Command-line entry point: prepare, train, eval, predict."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import (
    ConfigError,
    DatasetError,
    augment_reciprocal,
    build_manifest,
    load_dataset,
    write_manifest,
    write_vocabularies,
)
from .evaluation import FilterIndex, evaluate_queries, report_json, write_rank_dump
from .graph import build_ece_batch, build_index
from .training import TrainConfig, file_sha256, fit, load_checkpoint, save_checkpoint

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("ecechain")

RUN_KEYS = {"dataset": None, "out": "runs/default", "format": "auto", "granularity": None}
DATA_ENV = "ECECHAIN_DATA"


class CliError(Exception):
    pass


def resolve_dataset(path: str | None) -> Path:
    root = os.environ.get(DATA_ENV)
    if path is None:
        if root is None:
            raise CliError(f"no dataset given and ${DATA_ENV} is unset")
        return Path(root)
    p = Path(path)
    if not p.exists() and root is not None and (Path(root) / path).exists():
        return Path(root) / path
    if not p.exists():
        raise CliError(f"dataset directory not found: {path}")
    return p


def read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"cannot parse config {path}: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; found tables: {', '.join(nested)}")
    return values


def _coerce(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def split_run_config(values: dict) -> tuple[TrainConfig, dict]:
    run = {k: values.get(k, default) for k, default in RUN_KEYS.items()}
    train_values = {k: v for k, v in values.items() if k not in RUN_KEYS}
    return TrainConfig.from_dict(train_values), run


# ---------------------------------------------------------------- commands


def cmd_prepare(args) -> int:
    root = resolve_dataset(args.dataset)
    split, vocabs = load_dataset(root, format=args.format, granularity=args.granularity)
    out = Path(args.out)
    write_vocabularies(vocabs, out)
    index = build_index(split.train, vocabs)
    np.savez(out / "neighbor_index.npz", **index.arrays())
    manifest = build_manifest(split, vocabs)
    manifest["dataset_path"] = str(root.resolve())
    manifest["max_degree"] = int(np.diff(index.indptr).max()) if vocabs.entity_count else 0
    write_manifest(manifest, out)
    print(json.dumps({k: manifest[k] for k in ("entity_count", "relation_count", "time_count", "split_sizes")},
                     sort_keys=True))
    return 0


def cmd_train(args) -> int:
    values = read_config(args.config)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _coerce(raw.strip())
    if args.seed is not None:
        values["seed"] = args.seed
    if args.protocol is not None:
        values["protocol"] = args.protocol
    if args.dataset is not None:
        values["dataset"] = args.dataset
    if args.out is not None:
        values["out"] = args.out
    config, run = split_run_config(values)

    root = resolve_dataset(run["dataset"])
    split, vocabs = load_dataset(root, format=run["format"], granularity=run["granularity"])
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    run_echo = {**asdict(config), **run, "dataset": str(root.resolve())}
    (out / "run_config.json").write_text(json.dumps(run_echo, indent=2, sort_keys=True) + "\n")
    write_vocabularies(vocabs, out)

    result = fit(config, split, vocabs, metrics_log=out / "metrics.tsv", checkpoint_path=None)
    result.checkpoint.dataset.update({"path": str(root.resolve()), "format": run["format"],
                                      "granularity": run["granularity"]})
    ckpt_path = save_checkpoint(result.checkpoint, out / "checkpoint.npz")
    print(json.dumps({"checkpoint": str(ckpt_path), "best_epoch": result.best_epoch,
                      "valid_mrr": result.best_mrr}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.config
    root = resolve_dataset(args.dataset or ckpt.dataset.get("path"))
    split, vocabs = load_dataset(root, format=ckpt.dataset.get("format", "auto"),
                                 granularity=ckpt.dataset.get("granularity"))
    if vocabs.digest() != ckpt.vocab_hash:
        raise CliError("dataset vocabularies do not match the checkpoint")
    protocol = args.protocol or config.protocol
    model = ckpt.build_model()
    queries = augment_reciprocal(split[args.split], vocabs)
    if len(queries) == 0:
        raise CliError(f"split {args.split!r} is empty")
    filters = FilterIndex(split.all_quadruples(), vocabs) if protocol == "filtered" else None
    seed = config.seed if args.seed is None else args.seed
    mask = config.mask_eval_queries if args.mask_query_time is None else args.mask_query_time == "yes"
    report, ranks = evaluate_queries(
        model, queries, ckpt.neighbor_index(), protocol=protocol, filters=filters,
        history_only=config.history_only, strict=config.strict_filtering, seed=seed,
        batch_size=config.eval_batch_size, tie_policy=config.tie_policy, mask_query_time=mask,
    )
    text = report_json(report, protocol=protocol, split=args.split, tie_policy=config.tie_policy,
                       checkpoint_hash=file_sha256(args.checkpoint),
                       extra={"query_time_masked": mask, "seed": seed})
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.dump_ranks:
        write_rank_dump(args.dump_ranks, queries, ranks)
    return 0


def _lookup(name: str, table: list[str], kind: str) -> int:
    if name in table:
        return table.index(name)
    if name.startswith("#") and name[1:].isdigit() and int(name[1:]) < len(table):
        return int(name[1:])
    raise CliError(f"unknown {kind} {name!r}")


def parse_query(text: str, names: dict) -> tuple[int, int, int]:
    """Parse ``"s p ? t"`` or ``"? p o t"`` into (subject, relation, time) ids."""
    parts = text.split("\t") if "\t" in text else text.split()
    parts = [p.strip() for p in parts]
    if len(parts) != 4 or (parts[0] == "?") == (parts[2] == "?"):
        raise CliError(f"malformed query {text!r}; expected 's p ? t' or '? p o t'")
    rel = _lookup(parts[1], names["relations"], "relation")
    t = _lookup(parts[3], names["timestamps"], "timestamp")
    if parts[2] == "?":
        return _lookup(parts[0], names["entities"], "entity"), rel, t
    return _lookup(parts[2], names["entities"], "entity"), rel + len(names["relations"]), t


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.config
    s, r, t = parse_query(args.query, ckpt.names)
    model = ckpt.build_model()
    rng = np.random.default_rng(config.seed if args.seed is None else args.seed)
    batch = build_ece_batch(np.array([[s, r, 0, t]]), ckpt.neighbor_index(), config.k,
                            config.history_only, [config.mask_eval_queries], rng=rng)
    link, _ = model.scores(batch, with_time=False)
    scores = link.data[0]
    top = np.argsort(-scores, kind="stable")[: args.top_n]
    for e in top:
        print(f"{ckpt.names['entities'][e]}\t{scores[e]:.6f}")
    return 0


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecechain", description=__doc__)
    parser.add_argument("--device-threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load a dataset and write vocabularies + manifest")
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="auto", choices=("auto", "ids", "names"))
    p.add_argument("--granularity", default=None)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--protocol", choices=("raw", "filtered"), default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank a split and write a metric report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--protocol", choices=("raw", "filtered"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mask-query-time", choices=("yes", "no"), default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--dump-ranks", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-n answers for one query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True, help="'s p ? t' or '? p o t'")
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    limits = contextlib.nullcontext()
    if args.device_threads is not None:
        from threadpoolctl import threadpool_limits

        limits = threadpool_limits(limits=args.device_threads)
    try:
        with limits:
            return args.func(args)
    except (CliError, ConfigError, DatasetError, FileNotFoundError, KeyError, ValueError,
            IndexError) as exc:
        print(f"ecechain: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
