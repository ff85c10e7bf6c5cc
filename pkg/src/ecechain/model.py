"""The full chain model: embed branches, encode, mix, score."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoder import BRANCH_LEN, embed_branch, encode_branch, init_encoder_unit
from .graph import ECEBatch
from .heads import LossTerms, combined_loss, score_entities, score_timestamps
from .mixer import init_mixer_unit, mix_context

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    d: int = 320
    heads: int = 4
    n_encoder: int = 3
    n_mixer: int = 6
    k: int = 50
    ff_hidden: int = 1024
    mix_hidden: int = 1024
    ln_eps: float = 1e-5
    embed_std: float = 0.02
    precision: str = "float32"

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if min(self.d, self.heads, self.n_encoder, self.n_mixer, self.ff_hidden, self.mix_hidden) < 1:
            raise ValueError("model sizes must be positive")
        if self.k < 0:
            raise ValueError("k must be non-negative")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


def is_decayed(name: str) -> bool:
    """Weight decay skips layer-norm parameters and biases."""
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf.startswith("ln") or leaf in ("bq", "bk", "bv", "bo") or "_b" in leaf)


class ECEformer:
    def __init__(self, config: ModelConfig, entity_count: int, relation_count: int,
                 time_count: int, seed: int = 0):
        self.config = config
        self.entity_count = entity_count
        self.relation_count = relation_count
        self.time_count = time_count
        self.relation_offset = entity_count
        self.time_offset = entity_count + 2 * relation_count
        self.cls_token = self.time_offset + time_count
        self.mask_token = self.cls_token + 1
        self.token_count = self.mask_token + 1
        self.length = 1 + config.k

        rng = np.random.default_rng(seed)
        dt, d = config.dtype, config.d

        def normal(shape, name):
            return Tensor(rng.normal(0.0, config.embed_std, size=shape).astype(dt), requires_grad=True, name=name)

        params = {
            "embed.semantic": normal((self.token_count, d), "embed.semantic"),
            "embed.position": normal((BRANCH_LEN, d), "embed.position"),
            "context.pad": normal((d,), "context.pad"),
        }
        for i in range(config.n_encoder):
            for name, t in init_encoder_unit(rng, d, config.ff_hidden, dt, f"encoder.{i}.").items():
                params[f"encoder.{i}.{name}"] = t
        for j in range(config.n_mixer):
            for name, t in init_mixer_unit(rng, self.length, d, config.mix_hidden, dt, f"mixer.{j}.").items():
                params[f"mixer.{j}.{name}"] = t
        self.params: dict[str, Tensor] = params

    @classmethod
    def for_vocab(cls, config: ModelConfig, vocabs, seed: int = 0) -> "ECEformer":
        return cls(config, vocabs.entity_count, vocabs.relation_count, vocabs.time_count, seed)

    def _units(self, prefix: str, n: int) -> list[dict]:
        units = []
        for i in range(n):
            head = f"{prefix}.{i}."
            units.append({k[len(head):]: v for k, v in self.params.items() if k.startswith(head)})
        return units

    @property
    def encoder_units(self) -> list[dict]:
        return self._units("encoder", self.config.n_encoder)

    @property
    def mixer_units(self) -> list[dict]:
        return self._units("mixer", self.config.n_mixer)

    # ----------------------------------------------------------- forward

    def branch_tokens(self, batch: ECEBatch) -> tuple[np.ndarray, np.ndarray]:
        """Token ids (B, 1+k, 4) and the mask of real (non-padding) branches."""
        if batch.k != self.config.k:
            raise ValueError(f"batch built with k={batch.k}, model expects k={self.config.k}")
        b = len(batch)
        tokens = np.full((b, self.length, BRANCH_LEN), self.cls_token, dtype=np.int64)
        tokens[:, 0, 1] = batch.subject
        tokens[:, 0, 2] = self.relation_offset + batch.relation
        tokens[:, 0, 3] = np.where(batch.masked, self.mask_token, self.time_offset + batch.time)
        tokens[:, 1:, 1] = batch.nb_entity
        tokens[:, 1:, 2] = self.relation_offset + batch.nb_relation
        tokens[:, 1:, 3] = self.time_offset + batch.nb_time
        real = np.zeros((b, self.length), dtype=bool)
        real[:, 0] = True
        real[:, 1:] = np.arange(self.config.k)[None, :] < batch.counts[:, None]
        return tokens, real

    def represent(self, batch: ECEBatch) -> Tensor:
        """Unified representation, shape (B, d)."""
        cfg = self.config
        tokens, real = self.branch_tokens(batch)
        positions = np.flatnonzero(real.reshape(-1))
        x = embed_branch(tokens.reshape(-1, BRANCH_LEN)[positions],
                         self.params["embed.semantic"], self.params["embed.position"])
        branches = encode_branch(x, self.encoder_units, cfg.heads, cfg.ln_eps)
        ctx = ag.fill_rows(branches, positions, real.size, self.params["context.pad"])
        ctx = ag.reshape(ctx, (len(batch), self.length, cfg.d))
        return mix_context(ctx, self.mixer_units, real, cfg.ln_eps)

    def scores(self, batch: ECEBatch, with_time: bool = True):
        u = self.represent(batch)
        semantic = self.params["embed.semantic"]
        link = score_entities(u, semantic, self.entity_count)
        time = score_timestamps(u, semantic, self.time_offset, self.time_count) if with_time else None
        return link, time

    def loss(self, batch: ECEBatch, lam: float = 1.0) -> LossTerms:
        link, time = self.scores(batch, with_time=bool(batch.masked.any()))
        return combined_loss(link, batch.answer, time, batch.time, batch.masked, lam)

    # -------------------------------------------------------------- state

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, t in self.params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def config_dict(self) -> dict:
        return {
            **asdict(self.config),
            "entity_count": self.entity_count,
            "relation_count": self.relation_count,
            "time_count": self.time_count,
        }
