"""Optimisation loop, learning-rate schedule and checkpoint container."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data import ConfigError, DatasetSplit, Vocabularies, augment_reciprocal
from .evaluation import FilterIndex, MetricReport, evaluate_queries
from .graph import NeighborIndex, build_ece_batch, build_index, draw_seeds, mask_batch
from .model import ECEformer, ModelConfig, is_decayed

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "train_loss", "link_loss", "time_loss", "lr",
               "valid_mrr", "valid_hits@1", "valid_hits@3", "valid_hits@10", "seconds")


@dataclass
class TrainConfig:
    d: int = 320
    heads: int = 4
    n_encoder: int = 3
    n_mixer: int = 6
    k: int = 50
    ff_hidden: int = 1024
    mix_hidden: int = 1024
    batch_size: int = 512
    lr: float = 0.01
    weight_decay: float = 0.01
    coupled_weight_decay: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 300
    warmup_fraction: float = 0.10
    lam: float = 1.0
    gamma: float = 1.0
    seed: int = 0
    patience: int = 20
    precision: str = "float32"
    history_only: bool = True
    strict_filtering: bool = False
    protocol: str = "filtered"
    tie_policy: str = "mean"
    eval_batch_size: int = 256
    # "auto" hides the query time at eval iff training always hid it (gamma == 1)
    eval_query_mask: str = "auto"
    ln_eps: float = 1e-5
    embed_std: float = 0.02

    def __post_init__(self):
        positive = ("d", "heads", "n_encoder", "n_mixer", "ff_hidden", "mix_hidden",
                    "batch_size", "max_epochs", "patience", "eval_batch_size")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.k < 0:
            raise ConfigError("k must be non-negative")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError(f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.protocol not in ("raw", "filtered"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.tie_policy not in ("mean", "optimistic", "pessimistic"):
            raise ConfigError(f"unknown tie policy {self.tie_policy!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.eval_query_mask not in ("auto", "always", "never"):
            raise ConfigError(f"eval_query_mask must be auto, always or never, got {self.eval_query_mask!r}")

    @property
    def mask_eval_queries(self) -> bool:
        if self.eval_query_mask == "auto":
            return self.gamma >= 1.0
        return self.eval_query_mask == "always"

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d, heads=self.heads, n_encoder=self.n_encoder, n_mixer=self.n_mixer,
            k=self.k, ff_hidden=self.ff_hidden, mix_hidden=self.mix_hidden,
            ln_eps=self.ln_eps, embed_std=self.embed_std, precision=self.precision,
        )


# --------------------------------------------------------------- optimiser


class Adamax:
    """Infinity-norm Adam with decoupled (default) or coupled weight decay."""

    def __init__(self, params: dict[str, ag.Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0, decay_filter=is_decayed,
                 coupled: bool = False):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.coupled = coupled
        self.decayed = {name for name in params if decay_filter(name)}
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.u = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        correction = 1.0 - self.beta1 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                raise ag.ContractError(f"parameter {name} has no gradient")
            theta = p.data
            g = p.grad
            wd = self.weight_decay if name in self.decayed else 0.0
            if self.coupled and wd:
                g = g + wd * theta
            m = self.m[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            u = np.maximum(self.beta2 * self.u[name], np.abs(g))
            self.u[name] = u
            update = lr * m / (correction * (u + self.eps))
            if wd and not self.coupled:
                update = update + lr * wd * theta
            p.data = (theta - update).astype(theta.dtype, copy=False)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "u": {k: v.copy() for k, v in self.u.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for name in self.params:
            self.m[name] = np.array(state["m"][name], dtype=self.params[name].dtype)
            self.u[name] = np.array(state["u"][name], dtype=self.params[name].dtype)


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear 0 -> base_lr over the warm-up steps, then linear decay to 0."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup = math.ceil(warmup_fraction * total_steps)
    if step < warmup:
        return base_lr * step / warmup
    return base_lr * (total_steps - step) / (total_steps - warmup)


# -------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    config: TrainConfig
    counts: dict[str, int]
    params: dict[str, np.ndarray]
    optimizer: dict | None = None
    index: dict[str, np.ndarray] | None = None
    vocab_hash: str = ""
    names: dict[str, list[str]] | None = None
    best: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)

    def build_model(self) -> ECEformer:
        model = ECEformer(self.config.model_config(), self.counts["entity_count"],
                          self.counts["relation_count"], self.counts["time_count"], seed=0)
        model.load_state_dict(self.params)
        return model

    def neighbor_index(self) -> NeighborIndex:
        if self.index is None:
            raise ValueError("checkpoint carries no neighbour index")
        return NeighborIndex(**{k: np.ascontiguousarray(v, dtype=np.int64) for k, v in self.index.items()})


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": asdict(ckpt.config),
        "counts": ckpt.counts,
        "vocab_hash": ckpt.vocab_hash,
        "names": ckpt.names,
        "best": ckpt.best,
        "dataset": ckpt.dataset,
        "param_order": list(ckpt.params),
        "optimizer_step": None if ckpt.optimizer is None else ckpt.optimizer["t"],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, arr in ckpt.params.items():
        arrays[f"param/{name}"] = arr
    if ckpt.optimizer is not None:
        for name in ckpt.params:
            arrays[f"adamax_m/{name}"] = ckpt.optimizer["m"][name]
            arrays[f"adamax_u/{name}"] = ckpt.optimizer["u"][name]
    for name, arr in (ckpt.index or {}).items():
        arrays[f"index/{name}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        order = meta["param_order"]
        params = {name: z[f"param/{name}"] for name in order}
        optimizer = None
        if meta["optimizer_step"] is not None:
            optimizer = {
                "t": meta["optimizer_step"],
                "m": {name: z[f"adamax_m/{name}"] for name in order},
                "u": {name: z[f"adamax_u/{name}"] for name in order},
            }
        index = {k[len("index/"):]: z[k] for k in z.files if k.startswith("index/")} or None
    return Checkpoint(
        config=TrainConfig.from_dict(meta["config"]),
        counts=meta["counts"],
        params=params,
        optimizer=optimizer,
        index=index,
        vocab_hash=meta["vocab_hash"],
        names=meta["names"],
        best=meta["best"],
        dataset=meta["dataset"],
    )


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------- fit


@dataclass
class FitResult:
    model: ECEformer
    checkpoint: Checkpoint
    history: list[dict]
    best_epoch: int
    best_mrr: float


def _metrics_row(values: dict) -> str:
    out = []
    for col in LOG_COLUMNS:
        v = values.get(col, "")
        out.append(f"{v:.6g}" if isinstance(v, float) else str(v))
    return "\t".join(out)


def fit(config: TrainConfig, dataset: DatasetSplit, vocabs: Vocabularies, *,
        metrics_log=None, checkpoint_path=None, valid_split: str = "valid") -> FitResult:
    """Train with per-epoch neighbour resampling and early stopping on validation MRR."""
    rng = np.random.default_rng(config.seed)
    model = ECEformer.for_vocab(config.model_config(), vocabs, seed=config.seed)
    index = build_index(dataset.train, vocabs)
    queries = augment_reciprocal(dataset.train, vocabs)
    valid_queries = augment_reciprocal(dataset[valid_split], vocabs)
    filters = FilterIndex(dataset.all_quadruples(), vocabs) if config.protocol == "filtered" else None
    if len(queries) == 0:
        raise ValueError("training split is empty")

    optimizer = Adamax(model.params, config.beta1, config.beta2, config.adam_eps,
                       config.weight_decay, coupled=config.coupled_weight_decay)
    steps_per_epoch = math.ceil(len(queries) / config.batch_size)
    total_steps = steps_per_epoch * config.max_epochs
    param_list = list(model.params.values())

    log_fh = None
    if metrics_log is not None:
        log_fh = open(metrics_log, "w", encoding="utf-8")
        log_fh.write("\t".join(LOG_COLUMNS) + "\n")

    history: list[dict] = []
    best_mrr, best_epoch, best_state, best_opt, bad_epochs = -1.0, 0, None, None, 0
    step = 0
    pool = ThreadPoolExecutor(max_workers=1)

    def make_batch(sel, flags, seeds):
        return build_ece_batch(queries[sel], index, config.k, config.history_only, flags,
                               seeds=seeds, strict=config.strict_filtering)

    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            perm = rng.permutation(len(queries))
            seeds = draw_seeds(rng, len(queries))
            plan = []
            for lo in range(0, len(perm), config.batch_size):
                sel = perm[lo:lo + config.batch_size]
                plan.append((sel, mask_batch(len(sel), config.gamma, rng), seeds[lo:lo + len(sel)]))

            totals = np.zeros(3)
            pending = pool.submit(make_batch, *plan[0])
            for b, _ in enumerate(plan):
                batch = pending.result()
                if b + 1 < len(plan):
                    pending = pool.submit(make_batch, *plan[b + 1])
                try:
                    terms = model.loss(batch, config.lam)
                    optimizer.zero_grad()
                    ag.backward(terms.total, param_list)
                except ag.NumericError as exc:
                    raise ag.NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
                lr = lr_schedule(step, total_steps, config.lr, config.warmup_fraction)
                optimizer.step(lr)
                step += 1
                totals += (terms.total.item(), terms.link_loss, terms.time_loss)

            report, _ = evaluate_queries(
                model, valid_queries, index, protocol=config.protocol, filters=filters,
                history_only=config.history_only, strict=config.strict_filtering,
                seed=config.seed, batch_size=config.eval_batch_size, tie_policy=config.tie_policy,
                mask_query_time=config.mask_eval_queries,
            ) if len(valid_queries) else (MetricReport(0.0, {1: 0.0, 3: 0.0, 10: 0.0}, 0), None)
            totals /= len(plan)
            row = {
                "epoch": epoch, "step": step, "train_loss": float(totals[0]),
                "link_loss": float(totals[1]), "time_loss": float(totals[2]), "lr": float(lr),
                "valid_mrr": report.mrr, **{f"valid_hits@{k}": v for k, v in report.hits.items()},
                "seconds": time.perf_counter() - started,
            }
            history.append(row)
            if log_fh is not None:
                log_fh.write(_metrics_row(row) + "\n")
                log_fh.flush()
            log.info("epoch %d loss %.4f valid mrr %.4f", epoch, row["train_loss"], report.mrr)

            if report.mrr > best_mrr:
                best_mrr, best_epoch, bad_epochs = report.mrr, epoch, 0
                best_state, best_opt = model.state_dict(), optimizer.state_dict()
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break
    finally:
        pool.shutdown()
        if log_fh is not None:
            log_fh.close()

    model.load_state_dict(best_state)
    ckpt = Checkpoint(
        config=config,
        counts={"entity_count": vocabs.entity_count, "relation_count": vocabs.relation_count,
                "time_count": vocabs.time_count},
        params=best_state,
        optimizer=best_opt,
        index=index.arrays(),
        vocab_hash=vocabs.digest(),
        names={"entities": list(vocabs.entities), "relations": list(vocabs.relations),
               "timestamps": list(vocabs.timestamps)},
        best={"epoch": best_epoch, "valid_mrr": best_mrr, "epochs_run": len(history)},
        dataset={"name": dataset.name, "content_hash": dataset.content_hash},
    )
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
    return FitResult(model, ckpt, history, best_epoch, best_mrr)
