"""Context mixer over the (1+k) x d matrix of branch embeddings."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoder import ones, uniform_affine, zeros


def init_mixer_unit(rng, length: int, d: int, hidden: int, dtype=np.float64, prefix: str = "") -> dict[str, Tensor]:
    return {
        "ln1_gain": ones(d, dtype, prefix + "ln1_gain"),
        "ln1_bias": zeros(d, dtype, prefix + "ln1_bias"),
        # channel MLP acts on columns of length 1+k
        "ch_w1": uniform_affine(rng, length, hidden, dtype, prefix + "ch_w1"),
        "ch_b1": zeros(hidden, dtype, prefix + "ch_b1"),
        "ch_w2": uniform_affine(rng, hidden, length, dtype, prefix + "ch_w2"),
        "ch_b2": zeros(length, dtype, prefix + "ch_b2"),
        "ln2_gain": ones(d, dtype, prefix + "ln2_gain"),
        "ln2_bias": zeros(d, dtype, prefix + "ln2_bias"),
        # patch MLP acts on rows of width d
        "pa_w1": uniform_affine(rng, d, hidden, dtype, prefix + "pa_w1"),
        "pa_b1": zeros(hidden, dtype, prefix + "pa_b1"),
        "pa_w2": uniform_affine(rng, hidden, d, dtype, prefix + "pa_w2"),
        "pa_b2": zeros(d, dtype, prefix + "pa_b2"),
    }


def channel_mix(m: Tensor, p: dict, eps: float = 1e-5) -> Tensor:
    """Shared MLP applied to every column of ``m`` (shape (..., 1+k, d))."""
    if m.shape[-2] != p["ch_w1"].shape[0]:
        raise ag.ShapeError(
            f"channel_mix: context rows {m.shape} do not match channel weights {p['ch_w1'].shape}"
        )
    z = ag.transpose(ag.layer_norm(m, p["ln1_gain"], p["ln1_bias"], eps))
    y = ag.gelu(z @ p["ch_w1"] + p["ch_b1"]) @ p["ch_w2"] + p["ch_b2"]
    return m + ag.transpose(y)


def patch_mix(m: Tensor, p: dict, eps: float = 1e-5) -> Tensor:
    """Shared MLP applied to every row of ``m``."""
    z = ag.layer_norm(m, p["ln2_gain"], p["ln2_bias"], eps)
    return m + ag.gelu(z @ p["pa_w1"] + p["pa_b1"]) @ p["pa_w2"] + p["pa_b2"]


def mixer_unit(m: Tensor, p: dict, eps: float = 1e-5) -> Tensor:
    return patch_mix(channel_mix(m, p, eps), p, eps)


def unify(m: Tensor, row_mask=None) -> Tensor:
    """Average the rows of ``m``; rows where ``row_mask`` is False are ignored."""
    if row_mask is None:
        return ag.mean(m, axis=-2)
    row_mask = np.asarray(row_mask, dtype=bool)
    weights = row_mask / row_mask.sum(axis=-1, keepdims=True)
    return ag.sum(m * weights[..., None].astype(m.dtype), axis=-2)


def mix_context(m: Tensor, units: list[dict], row_mask=None, eps: float = 1e-5) -> Tensor:
    for p in units:
        m = mixer_unit(m, p, eps)
    return unify(m, row_mask)
