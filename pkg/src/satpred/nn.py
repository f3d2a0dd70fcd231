"""Layers, optimizer and gradient checking on top of the autograd engine."""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


def multi_head_attention(
    x: Tensor,
    mask: np.ndarray,
    params: dict,
    prefix: str,
    n_heads: int,
    dropout_rate: float,
    rng: np.random.Generator | None,
    training: bool,
) -> Tensor:
    """Scaled dot-product self-attention over x: [B, T, E], mask: [B, T]."""
    B, T, E = x.shape
    if E % n_heads != 0:
        raise ValueError(f"embedding size {E} not divisible by {n_heads} heads")
    dh = E // n_heads

    q = linear(x, params[f"{prefix}.attn.wq"], params[f"{prefix}.attn.bq"])
    k = linear(x, params[f"{prefix}.attn.wk"], params[f"{prefix}.attn.bk"])
    v = linear(x, params[f"{prefix}.attn.wv"], params[f"{prefix}.attn.bv"])

    def split_heads(t: Tensor) -> Tensor:
        return ag.transpose(ag.reshape(t, (B, T, n_heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    scores = ag.mul(ag.matmul(qh, ag.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    key_mask = mask[:, None, None, :]  # broadcast over heads and query positions
    attn = ag.softmax(scores, axis=-1, mask=key_mask)
    attn = ag.dropout(attn, dropout_rate, rng, training)
    ctx = ag.matmul(attn, vh)  # [B, H, T, dh]
    ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (B, T, E))
    return linear(ctx, params[f"{prefix}.attn.wo"], params[f"{prefix}.attn.bo"])


def encoder_block(
    x: Tensor,
    mask: np.ndarray,
    params: dict,
    prefix: str,
    n_heads: int,
    dropout_rate: float,
    rng: np.random.Generator | None,
    training: bool,
) -> Tensor:
    """Pre-norm transformer encoder block: LN -> MHA -> add, LN -> FFN -> add."""
    h = ag.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    x = ag.add(x, multi_head_attention(h, mask, params, prefix, n_heads, dropout_rate, rng, training))
    h = ag.layer_norm(x, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
    h = ag.gelu(linear(h, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.b1"]))
    h = linear(h, params[f"{prefix}.ffn.w2"], params[f"{prefix}.ffn.b2"])
    h = ag.dropout(h, dropout_rate, rng, training)
    return ag.add(x, h)


def encoder_stack(
    x: Tensor,
    mask: np.ndarray,
    params: dict,
    prefix: str,
    n_layers: int,
    n_heads: int,
    dropout_rate: float,
    rng: np.random.Generator | None,
    training: bool,
) -> Tensor:
    for i in range(n_layers):
        x = encoder_block(x, mask, params, f"{prefix}.block{i}", n_heads, dropout_rate, rng, training)
    return x


def init_block_params(params: dict, prefix: str, E: int, rng: np.random.Generator, dtype) -> None:
    def w(name, shape, scale=0.02):
        params[name] = Parameter(name, (rng.standard_normal(shape) * scale).astype(dtype))

    def zeros(name, shape):
        params[name] = Parameter(name, np.zeros(shape, dtype=dtype))

    def ones(name, shape):
        params[name] = Parameter(name, np.ones(shape, dtype=dtype))

    ones(f"{prefix}.ln1.gain", (E,))
    zeros(f"{prefix}.ln1.bias", (E,))
    for part in ("wq", "wk", "wv", "wo"):
        w(f"{prefix}.attn.{part}", (E, E))
    for part in ("bq", "bk", "bv", "bo"):
        zeros(f"{prefix}.attn.{part}", (E,))
    ones(f"{prefix}.ln2.gain", (E,))
    zeros(f"{prefix}.ln2.bias", (E,))
    w(f"{prefix}.ffn.w1", (E, 4 * E))
    zeros(f"{prefix}.ffn.b1", (4 * E,))
    w(f"{prefix}.ffn.w2", (4 * E, E))
    zeros(f"{prefix}.ffn.b2", (E,))


class Adam:
    """Bias-corrected Adam over named Parameters; zeroes grads after a step."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = {name: p for name, p in sorted(params.items())}
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if not np.isfinite(p.grad).all():
                raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.zero_grad()


def backward_into_params(loss: Tensor, params: dict) -> None:
    """Run backward; Parameter leaves keep their accumulated grads."""
    loss.backward()


def grad_check(
    loss_fn,
    params: dict,
    eps: float = 1e-5,
    num_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must be a deterministic closure over `params` returning a scalar
    Tensor (reseed any internal rng on every call). Coordinates are sampled
    uniformly across all parameter entries. Requires float64 parameters.
    """
    rng = rng or np.random.default_rng(0)
    names = sorted(params)
    for n in names:
        if params[n].data.dtype != np.float64:
            raise ValueError("grad_check requires 64-bit parameters")
        params[n].zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {n: params[n].grad.copy() for n in names}
    for n in names:
        params[n].zero_grad()

    sizes = np.array([params[n].data.size for n in names])
    total = int(sizes.sum())
    count = min(num_coords, total)
    flat_idx = rng.choice(total, size=count, replace=False)
    bounds = np.cumsum(sizes)

    max_rel = 0.0
    for fi in flat_idx:
        pi = int(np.searchsorted(bounds, fi, side="right"))
        local = int(fi - (bounds[pi - 1] if pi > 0 else 0))
        p = params[names[pi]]
        flat = p.data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + eps
        f_plus = loss_fn().item()
        flat[local] = orig - eps
        f_minus = loss_fn().item()
        flat[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[names[pi]].reshape(-1)[local]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
