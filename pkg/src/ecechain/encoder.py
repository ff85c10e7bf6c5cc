"""Branch encoder: 4-token [CLS, entity, predicate, time] Transformer stack."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

BRANCH_LEN = 4


def uniform_affine(rng: np.random.Generator, fan_in: int, fan_out: int, dtype, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    return Tensor(w, requires_grad=True, name=name)


def zeros(shape, dtype, name: str) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)


def ones(shape, dtype, name: str) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True, name=name)


def init_encoder_unit(rng, d: int, ff_hidden: int, dtype=np.float64, prefix: str = "") -> dict[str, Tensor]:
    p = {}
    for proj in ("wq", "wk", "wv", "wo"):
        p[proj] = uniform_affine(rng, d, d, dtype, prefix + proj)
        p["b" + proj[1]] = zeros(d, dtype, prefix + "b" + proj[1])
    p["ln1_gain"], p["ln1_bias"] = ones(d, dtype, prefix + "ln1_gain"), zeros(d, dtype, prefix + "ln1_bias")
    p["ff_w1"] = uniform_affine(rng, d, ff_hidden, dtype, prefix + "ff_w1")
    p["ff_b1"] = zeros(ff_hidden, dtype, prefix + "ff_b1")
    p["ff_w2"] = uniform_affine(rng, ff_hidden, d, dtype, prefix + "ff_w2")
    p["ff_b2"] = zeros(d, dtype, prefix + "ff_b2")
    p["ln2_gain"], p["ln2_bias"] = ones(d, dtype, prefix + "ln2_gain"), zeros(d, dtype, prefix + "ln2_bias")
    return p


def embed_branch(tokens, semantic: Tensor, position: Tensor) -> Tensor:
    """Rows ``E[token_j] + P[j]`` for token ids of shape (..., 4)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[-1] != position.shape[0]:
        raise ag.ShapeError(f"embed_branch: tokens {tokens.shape} vs positions {position.shape}")
    return ag.embedding_lookup(semantic, tokens) + position


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = ag.reshape(x, (*lead, n, heads, d // heads))
    nd = len(lead)
    return ag.transpose(x, (*range(nd), nd + 1, nd, nd + 2))


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nd = len(lead)
    x = ag.transpose(x, (*range(nd), nd + 1, nd, nd + 2))
    return ag.reshape(x, (*lead, n, h * dh))


def multi_head_attention(x: Tensor, p: dict, heads: int, mask=None, return_weights: bool = False):
    """Scaled dot-product self-attention over the token axis (-2).

    ``mask`` is a boolean (..., n, n) array broadcastable to the scores;
    False entries are excluded from the softmax.
    """
    d = x.shape[-1]
    if d % heads:
        raise ag.ShapeError(f"model width {d} is not divisible by {heads} heads")
    q = split_heads(x @ p["wq"] + p["bq"], heads)
    k = split_heads(x @ p["wk"] + p["bk"], heads)
    v = split_heads(x @ p["wv"] + p["bv"], heads)
    scores = ag.scale(q @ ag.transpose(k), 1.0 / np.sqrt(d // heads))
    weights = ag.softmax(scores, axis=-1, mask=mask)
    out = merge_heads(weights @ v) @ p["wo"] + p["bo"]
    return (out, weights) if return_weights else out


def feed_forward(x: Tensor, p: dict) -> Tensor:
    return ag.gelu(x @ p["ff_w1"] + p["ff_b1"]) @ p["ff_w2"] + p["ff_b2"]


def encoder_unit(x: Tensor, p: dict, heads: int, eps: float = 1e-5) -> Tensor:
    """Post-norm unit: h = LN(MHA(x) + x); y = LN(FF(h) + h)."""
    h = ag.layer_norm(multi_head_attention(x, p, heads) + x, p["ln1_gain"], p["ln1_bias"], eps)
    return ag.layer_norm(feed_forward(h, p) + h, p["ln2_gain"], p["ln2_bias"], eps)


def encode_branch(x: Tensor, units: list[dict], heads: int, eps: float = 1e-5) -> Tensor:
    """Run all units and return the CLS-position row, shape (..., d)."""
    if not units:
        raise ValueError("at least one encoder unit is required")
    for p in units:
        x = encoder_unit(x, p, heads, eps)
    return ag.index(x, (..., 0, slice(None)))
