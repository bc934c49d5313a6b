"""Numerical building blocks: softmax, layer norm, attention, feed-forward.

All functions work on the last two axes, so a single feature matrix
``(n_tokens, dim)`` and a batch ``(batch, n_tokens, dim)`` go through the
same code path. The adapter and backbone modules are composed entirely from
these pieces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import torch
from torch import Tensor, nn

from .errors import DeterminismError, InvalidInputError, ShapeError

FeatureMatrix = Tensor


def as_feature_matrix(data, dtype: torch.dtype | None = None) -> FeatureMatrix:
    """Validate and return ``data`` as a finite 2-D tensor with at least one token."""
    m = torch.as_tensor(data, dtype=dtype)
    if m.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {tuple(m.shape)}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"feature matrix needs n_tokens >= 1 and dim >= 1, got {tuple(m.shape)}")
    if not torch.isfinite(m).all():
        raise InvalidInputError("feature matrix contains NaN or Inf")
    return m


def _softmax(m: Tensor) -> Tensor:
    shifted = m - m.amax(dim=-1, keepdim=True)
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    m = torch.as_tensor(m)
    if not torch.isfinite(m).all():
        raise InvalidInputError("softmax_rows requires finite input")
    return _softmax(m)


def layer_norm(m: Tensor, eps: float = 1e-5) -> Tensor:
    """Non-affine layer norm over the last axis (population variance)."""
    if eps <= 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    if m.shape[-1] < 2:
        raise InvalidInputError("layer_norm needs dim >= 2")
    mean = m.mean(dim=-1, keepdim=True)
    centered = m - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return centered / torch.sqrt(var + eps)


def gelu(x: Tensor) -> Tensor:
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


@dataclass
class AttentionParams:
    """Projection weights for one multi-head attention.

    ``w_q`` is ``(d_q, d_model)``, ``w_k`` and ``w_v`` are ``(d_kv, d_model)``
    and ``w_o`` is ``(d_model, d_model)``. Inputs are row vectors.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    n_heads: int

    def __post_init__(self):
        d_model = self.w_q.shape[1]
        if self.n_heads < 1 or d_model % self.n_heads:
            raise ShapeError(f"d_model={d_model} not divisible by n_heads={self.n_heads}")
        if self.w_k.shape[1] != d_model or self.w_v.shape[1] != d_model:
            raise ShapeError("w_k / w_v output width must equal d_model")
        if self.w_k.shape[0] != self.w_v.shape[0]:
            raise ShapeError("w_k and w_v must share the key/value input width")
        if tuple(self.w_o.shape) != (d_model, d_model):
            raise ShapeError(f"w_o must be ({d_model}, {d_model}), got {tuple(self.w_o.shape)}")

    @property
    def d_q(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_kv(self) -> int:
        return self.w_k.shape[0]

    @property
    def d_model(self) -> int:
        return self.w_q.shape[1]

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    params: AttentionParams,
    kv_mask: Tensor | None = None,
) -> Tensor:
    """Scaled dot-product attention of ``q_in`` over ``kv_in``.

    ``kv_mask`` (optional, shape ``(..., n_kv)``, True = keep) hides padded
    key/value tokens; every row must keep at least one token.
    Self-attention is ``multi_head_attention(x, x, params)``.
    """
    if q_in.shape[-1] != params.d_q:
        raise ShapeError(f"query width {q_in.shape[-1]} != d_q {params.d_q}")
    if kv_in.shape[-1] != params.d_kv:
        raise ShapeError(f"key/value width {kv_in.shape[-1]} != d_kv {params.d_kv}")
    h, hd = params.n_heads, params.head_dim

    def split(x: Tensor) -> Tensor:
        # (..., n, d_model) -> (..., h, n, hd)
        return x.unflatten(-1, (h, hd)).transpose(-3, -2)

    q = split(q_in @ params.w_q)
    k = split(kv_in @ params.w_k)
    v = split(kv_in @ params.w_v)
    logits = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
    if kv_mask is not None:
        keep = kv_mask.unsqueeze(-2).unsqueeze(-3)
        logits = logits.masked_fill(~keep, torch.finfo(logits.dtype).min)
    ctx = _softmax(logits) @ v
    ctx = ctx.transpose(-3, -2).flatten(-2)
    return ctx @ params.w_o


def feed_forward(m: Tensor, w1: Tensor, w2: Tensor, b1: Tensor, b2: Tensor) -> Tensor:
    """``gelu(m @ w1 + b1) @ w2 + b2``."""
    if m.shape[-1] != w1.shape[0]:
        raise ShapeError(f"input width {m.shape[-1]} != w1 rows {w1.shape[0]}")
    if w1.shape[1] != w2.shape[0] or b1.shape[-1] != w1.shape[1] or b2.shape[-1] != w2.shape[1]:
        raise ShapeError("inconsistent feed-forward weight shapes")
    return gelu(m @ w1 + b1) @ w2 + b2


def init_weight(gen: torch.Generator, fan_in: int, fan_out: int) -> Tensor:
    return torch.randn(fan_in, fan_out, generator=gen) / math.sqrt(fan_in)


class Attention(nn.Module):
    """Learnable container for :class:`AttentionParams`."""

    def __init__(self, d_q: int, d_kv: int, d_model: int, n_heads: int, gen: torch.Generator):
        super().__init__()
        if d_model % n_heads:
            raise ShapeError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.w_q = nn.Parameter(init_weight(gen, d_q, d_model))
        self.w_k = nn.Parameter(init_weight(gen, d_kv, d_model))
        self.w_v = nn.Parameter(init_weight(gen, d_kv, d_model))
        self.w_o = nn.Parameter(init_weight(gen, d_model, d_model))

    @property
    def params(self) -> AttentionParams:
        return AttentionParams(self.w_q, self.w_k, self.w_v, self.w_o, self.n_heads)

    def forward(self, q_in: Tensor, kv_in: Tensor, kv_mask: Tensor | None = None) -> Tensor:
        return multi_head_attention(q_in, kv_in, self.params, kv_mask)

    @staticmethod
    def n_params(d_q: int, d_kv: int, d_model: int) -> int:
        return d_q * d_model + 2 * d_kv * d_model + d_model * d_model


class FeedForward(nn.Module):
    def __init__(self, dim: int, gen: torch.Generator, mult: int = 4):
        super().__init__()
        inner = mult * dim
        self.w1 = nn.Parameter(init_weight(gen, dim, inner))
        self.b1 = nn.Parameter(torch.zeros(inner))
        self.w2 = nn.Parameter(init_weight(gen, inner, dim))
        self.b2 = nn.Parameter(torch.zeros(dim))

    def forward(self, m: Tensor) -> Tensor:
        return feed_forward(m, self.w1, self.w2, self.b1, self.b2)

    @staticmethod
    def n_params(dim: int, mult: int = 4) -> int:
        inner = mult * dim
        return 2 * dim * inner + inner + dim


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    eps: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(e < self.tol for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_error.items() if v >= self.tol}


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    ``params`` must be float64 leaf tensors that ``loss_fn`` reads; they are
    perturbed in place one scalar at a time and restored afterwards.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    named = list(params.items()) if isinstance(params, Mapping) else list(params)
    for name, p in named:
        if p.dtype != torch.float64:
            raise InvalidInputError(f"grad_check needs float64 parameters; {name} is {p.dtype}")

    with torch.no_grad():
        first, second = float(loss_fn()), float(loss_fn())
    if first != second:
        raise DeterminismError(f"loss_fn is not deterministic: {first!r} != {second!r}")

    tensors = [p for _, p in named]
    for p in tensors:
        p.requires_grad_(True)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)

    errors: dict[str, float] = {}
    with torch.no_grad():
        for (name, p), g in zip(named, grads):
            analytic = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            a_flat = analytic.reshape(-1)
            worst = 0.0
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = float(loss_fn())
                flat[i] = orig - eps
                f_minus = float(loss_fn())
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * eps)
                a = a_flat[i].item()
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
                worst = max(worst, rel)
            errors[name] = worst
    return GradCheckReport(errors, eps, tol)
