"""Minimal reverse-mode autodiff over numpy arrays.

A tape-free graph of `Tensor` nodes; each op records a backward closure that
accumulates into its parents' `.grad`. Precision follows the dtype of the
leaf arrays (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
_MASK_FILL = -1e30


class NonFiniteError(FloatingPointError):
    """Raised when a non-finite value is detected where finiteness is required."""


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-accumulate gradients from this (scalar or not) node."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    """Named leaf tensor with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.ascontiguousarray(data))
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = Tensor(a.data + b.data, (a, b))

    def bw(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = bw
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = Tensor(a.data - b.data, (a, b))

    def bw(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = bw
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = Tensor(a.data * b.data, (a, b))

    def bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bw
    return out


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = Tensor(a.data / b.data, (a, b))

    def bw(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, (a,))
    out._backward = lambda g: a._accumulate(-g)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.matmul(a.data, b.data), (a, b))

    def bw(g):
        a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    out._backward = bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))
    out._backward = lambda g: a._accumulate(g.reshape(a.data.shape))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes), (a,))
    out._backward = lambda g: a._accumulate(g.transpose(inv))
    return out


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, s, e in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(s, e)
            t._accumulate(g[tuple(idx)])

    out._backward = bw
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of `table` gathered by integer array `ids` (any shape)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.data.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    out = Tensor(table.data[ids], (table,))

    def bw(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    out._backward = bw
    return out


def select_position(a: Tensor, t: int) -> Tensor:
    """a[..., t, :] for a of shape [..., T, E]."""
    out = Tensor(a.data[..., t, :], (a,))

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[..., t, :] = g
        a._accumulate(ga)

    out._backward = bw
    return out


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out._backward = bw
    return out


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reduce_max(a: Tensor, axis: int, mask: np.ndarray | None = None) -> Tensor:
    """Max over `axis`; entries where mask is False are excluded.

    Backward routes the gradient to the first argmax along the axis.
    """
    if a.data.shape[axis] < 1:
        raise ValueError("reduce_max over an empty axis")
    data = a.data if mask is None else np.where(mask, a.data, -np.inf)
    idx = np.argmax(data, axis=axis)
    idx_exp = np.expand_dims(idx, axis)
    out_data = np.take_along_axis(data, idx_exp, axis).squeeze(axis)
    if not np.isfinite(out_data).all():
        raise NonFiniteError("reduce_max saw a fully masked slice")
    out = Tensor(out_data, (a,))

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx_exp, np.expand_dims(g, axis), axis)
        a._accumulate(ga)

    out._backward = bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * y * (1.0 - y))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), (a,))
    out._backward = lambda g: a._accumulate(g / a.data)
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * y)
    return out


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * 0.5 / y)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with straight-through gradient inside the active range."""
    y = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * inside)
    return out


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * cdf, (a,))

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        a._accumulate(g * (cdf + x * pdf))

    out._backward = bw
    return out


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax; entries where mask is False receive ~0 probability."""
    z = a.data if mask is None else np.where(mask, a.data, _MASK_FILL)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, (a,))

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accumulate(y * (g - dot))

    out._backward = bw
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: identity at inference, survivors scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    scale = 1.0 / (1.0 - rate)
    m = keep * scale
    out = Tensor(a.data * m, (a,))
    out._backward = lambda g: a._accumulate(g * m)
    return out


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row −log softmax(logits)[target], max-subtraction stabilized.

    logits: [C] or [B, C]; targets: scalar id or [B] ids. Returns a tensor of
    per-row losses (scalar for the 1-D case).
    """
    z = logits.data
    squeeze = z.ndim == 1
    z2 = z[None, :] if squeeze else z
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.min() < 0 or t.max() >= z2.shape[-1]:
        raise IndexError(f"target out of range [0, {z2.shape[-1]})")
    m = z2.max(axis=-1, keepdims=True)
    e = np.exp(z2 - m)
    lse = np.log(e.sum(axis=-1)) + m[:, 0]
    rows = np.arange(z2.shape[0])
    losses = lse - z2[rows, t]
    out = Tensor(losses[0] if squeeze else losses, (logits,))

    def bw(g):
        p = e / e.sum(axis=-1, keepdims=True)
        p[rows, t] -= 1.0
        gl = np.atleast_1d(g)[:, None] * p
        logits._accumulate(gl[0] if squeeze else gl)

    out._backward = bw
    return out


def binary_cross_entropy(p: Tensor, labels, eps: float = 1e-7) -> Tensor:
    """Elementwise −[l·ln p + (1−l)·ln(1−p)] with p clamped to [eps, 1−eps]."""
    labels = np.asarray(labels, dtype=p.dtype)
    pc = clip(p, eps, 1.0 - eps)
    one = Tensor(np.asarray(1.0, dtype=p.dtype))
    return neg(add(mul(log(pc), labels), mul(log(sub(one, pc)), 1.0 - labels)))


def l2_normalize(a: Tensor, axis: int = -1, min_norm: float = 0.0) -> Tensor:
    sq = reduce_sum(mul(a, a), axis=axis, keepdims=True)
    norm = sqrt(sq)
    if min_norm > 0 and (norm.data <= min_norm).any():
        raise ValueError("cannot normalize a zero-norm vector")
    return div(a, norm)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """cos(a, b) for 1-D vectors; raises on zero-norm input."""
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return reduce_sum(mul(l2_normalize(a), l2_normalize(b)))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    mu = reduce_mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = reduce_mean(mul(xc, xc), axis=-1, keepdims=True)
    inv = div(Tensor(np.asarray(1.0, dtype=x.dtype)), sqrt(add(var, eps)))
    return add(mul(mul(xc, inv), gain), bias)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.isfinite(t.data).all():
        raise NonFiniteError(f"non-finite values in {what}")
    return t
