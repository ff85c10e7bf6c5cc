"""Minimal dense tensor engine with reverse-mode differentiation.

Values live in numpy arrays; every op records a closure that maps the
upstream gradient to gradients for its inputs. Only what the model needs
is here: no views, no in-place ops, no device handling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

# plain floats so float32 arrays are not promoted
_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class NumericError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised on incompatible operand shapes."""


class ContractError(RuntimeError):
    """Raised when an API precondition is violated."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        return (g * c,)

    return _node(a.data * a.dtype.type(c), (a,), bw, "scale")


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact error-function CDF."""
    v = x.data
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        return (g * (cdf + v * pdf),)

    return _node(v * cdf, (x,), bw, "gelu")


# ------------------------------------------------------------------- shapes


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _node(out, (a, b), bw, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got shape {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _node(np.transpose(a.data, axes), (a,), bw, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), bw, "reshape")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; output shape is ``ids.shape + (width,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding ids must lie in [0, {n}), got range [{ids.min()}, {ids.max()}]")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _node(table.data[ids], (table,), bw, "embedding_lookup")


def index(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; advanced indexing goes through embedding_lookup."""
    out = a.data[key]

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _node(np.array(out), (a,), bw, "index")


def fill_rows(values: Tensor, positions, total: int, fill: Tensor) -> Tensor:
    """(total, d) matrix with ``values`` at ``positions`` and ``fill`` elsewhere."""
    positions = np.asarray(positions, dtype=np.int64)
    if values.ndim != 2 or fill.shape != (values.shape[1],):
        raise ShapeError(f"fill_rows: incompatible shapes {values.shape} and {fill.shape}")
    free = np.ones(total, dtype=bool)
    free[positions] = False
    out = np.empty((total, values.shape[1]), dtype=values.dtype)
    out[free] = fill.data
    out[positions] = values.data

    def bw(g):
        return g[positions], g[free].sum(axis=0)

    return _node(out, (values, fill), bw, "fill_rows")


def concat_rows(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat_rows: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), bw, "concat_rows")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mean_over_rows(a: Tensor) -> Tensor:
    return mean(a, axis=-2)


# ------------------------------------------------------------- normalising


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    v = x.data
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return _node(p, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    v = x.data
    shifted = v - np.max(v, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _node(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    v = x.data
    n = v.shape[-1]
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gg = _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None
        gb = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            gx = inv / n * (
                n * gxhat
                - gxhat.sum(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
            )
        return gx, gg, gb

    return _node(out, (x, gain, bias), bw, "layer_norm")


def cross_entropy(logits: Tensor, targets, reduction: str = "mean", weights=None) -> Tensor:
    """Negative log-likelihood of ``targets`` under softmax(logits).

    ``logits`` is (classes,) with an int target, or (batch, classes) with a
    target vector. ``weights`` scales each row's loss before reduction.
    """
    single = logits.ndim == 1
    v = logits.data[None, :] if single else logits.data
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n_cls = v.shape[-1]
    if t.shape[0] != v.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= n_cls):
        raise IndexError(f"target class out of range [0, {n_cls})")
    w = np.ones(v.shape[0], dtype=v.dtype) if weights is None else np.asarray(weights, dtype=v.dtype)
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(v.shape[0])
    per_row = (lse - shifted[rows, t]) * w
    if reduction == "mean":
        out, coef = per_row.mean(), w / v.shape[0]
    elif reduction == "sum":
        out, coef = per_row.sum(), w
    elif reduction == "none":
        out, coef = per_row, None
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def bw(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, t] -= 1.0
        scale_rows = w * g if coef is None else coef * g
        gl = p * scale_rows[:, None]
        return (gl[0] if single else gl,)

    if single and reduction == "none":
        out = out[0]
    return _node(np.asarray(out, dtype=v.dtype), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Any tensor in ``params`` that the loss does not depend on gets a zero
    gradient so optimizers can treat all parameters uniformly.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# -------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    delta: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` is re-evaluated after perturbing ``params`` in place. Relative
    error per coordinate is |a - n| / max(|a|, |n|, floor); ``floor`` keeps
    coordinates whose true gradient is ~0 from amplifying round-off.
    """
    for p in params.values():
        if p.dtype != np.float64:
            raise ContractError("grad_check requires 64-bit parameters")
        p.grad = None
    backward(f(), params.values())
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    for name, p in params.items():
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + delta
            fp = f().item()
            flat[i] = orig - delta
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * delta)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report.per_param[name] = worst
        report.checked += len(coords)
        report.max_rel_error = max(report.max_rel_error, worst)
    for p in params.values():
        p.grad = None
    return report
