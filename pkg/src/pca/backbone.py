"""Small pre-norm transformer classifier with adapter insertion sites."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .adapt import VARIANTS, AdaptBlock, AdapterDims, Variant
from .errors import ConfigurationError, InvalidInputError, MissingKnowledgeError, ShapeError
from .nn import Attention, FeedForward, init_weight, layer_norm

LabelMode = Literal["single", "multi"]


@dataclass(frozen=True)
class BackboneConfig:
    class_count: int
    input_dim: int
    depth: int = 6
    d_model: int = 64
    n_heads: int = 4
    head_dropout: float = 0.5
    label_mode: LabelMode = "single"
    ffn_mult: int = 4

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if self.d_model < 2 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.head_dropout < 1.0:
            raise ConfigurationError("head_dropout must lie in [0, 1)")
        if self.label_mode not in ("single", "multi"):
            raise ConfigurationError(f"unknown label_mode {self.label_mode!r}")
        if self.class_count < 1 or self.input_dim < 1:
            raise ConfigurationError("class_count and input_dim must be positive")


def default_sites(depth: int, block_num: int) -> tuple[int, ...]:
    """``block_num`` sites spread evenly over the last half, ending at the last block."""
    if block_num == 0:
        return ()
    if not 0 < block_num <= depth:
        raise ConfigurationError(f"block_num {block_num} out of range for depth {depth}")
    start = depth // 2 if block_num <= depth - depth // 2 else 0
    if block_num == 1:
        return (depth - 1,)
    sites = np.rint(np.linspace(start, depth - 1, block_num)).astype(int)
    return tuple(int(s) for s in sites)


@dataclass(frozen=True)
class InsertionPlan:
    visual_sites: tuple[int, ...] = ()
    textual_sites: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "visual_sites", tuple(sorted(set(self.visual_sites))))
        object.__setattr__(self, "textual_sites", tuple(sorted(set(self.textual_sites))))
        if not set(self.textual_sites) <= set(self.visual_sites):
            raise ConfigurationError("textual sites must be a subset of visual sites")

    @property
    def block_num(self) -> int:
        return len(self.visual_sites)

    @classmethod
    def default(cls, depth: int, block_num: int = 3) -> "InsertionPlan":
        sites = default_sites(depth, block_num)
        return cls(sites, sites[-1:])

    def validate(self, depth: int) -> None:
        bad = [i for i in self.visual_sites if not 0 <= i < depth]
        if bad:
            raise ConfigurationError(f"insertion sites {bad} outside [0, {depth})")


@dataclass
class Knowledge:
    """Batched knowledge inputs; a ``None`` modality is switched off."""

    f_v: Tensor | None = None
    f_t: Tensor | None = None
    t_mask: Tensor | None = None


ABSENT = Knowledge()


def stream_seed(seed: int, *key) -> int:
    """Independent 63-bit seed for a named parameter group."""
    digest = hashlib.sha256(repr((seed,) + key).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _generator(seed: int, *key) -> torch.Generator:
    return torch.Generator().manual_seed(stream_seed(seed, *key))


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ffn_mult: int, gen: torch.Generator):
        super().__init__()
        self.attn = Attention(d_model, d_model, d_model, n_heads, gen)
        self.ffn = FeedForward(d_model, gen, ffn_mult)

    def forward(self, x: Tensor) -> Tensor:
        n = layer_norm(x)
        x = x + self.attn(n, n)
        return x + self.ffn(layer_norm(x))


class PCAModel(nn.Module):
    """Backbone, per-site adapters and classifier head.

    Backbone, head and each adapter site draw their initial weights from
    separate seed streams, so adding adapters never changes the backbone.
    """

    def __init__(self, cfg: BackboneConfig, plan: InsertionPlan, dims: AdapterDims,
                 variant: Variant = "adapt", seed: int = 0):
        super().__init__()
        plan.validate(cfg.depth)
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown structure variant {variant!r}")
        self.cfg, self.plan, self.dims, self.variant, self.seed = cfg, plan, dims, variant, seed
        self.step = 0

        g = _generator(seed, "backbone")
        self.in_w = nn.Parameter(init_weight(g, cfg.input_dim, cfg.d_model))
        self.in_b = nn.Parameter(torch.zeros(cfg.d_model))
        self.blocks = nn.ModuleList(Block(cfg.d_model, cfg.n_heads, cfg.ffn_mult, g) for _ in range(cfg.depth))
        self.adapters = nn.ModuleDict({
            str(i): AdaptBlock(variant, cfg.d_model, dims, i in plan.textual_sites,
                               _generator(seed, "adapter", i), cfg.n_heads)
            for i in plan.visual_sites
        })
        g = _generator(seed, "head")
        self.head_w = nn.Parameter(init_weight(g, cfg.d_model, cfg.class_count))
        self.head_b = nn.Parameter(torch.zeros(cfg.class_count))

    def backbone_parameters(self):
        skip = {id(p) for p in self.adapters.parameters()} | {id(self.head_w), id(self.head_b)}
        return [p for p in self.parameters() if id(p) not in skip]

    def forward(self, clip_tokens: Tensor, knowledge: Knowledge | None = None,
                mode: Literal["train", "eval"] = "eval",
                dropout_gen: torch.Generator | None = None) -> Tensor:
        """Logits for ``(..., T, input_dim)`` clip tokens.

        Pass ``ABSENT`` to run without knowledge; ``None`` is refused when the
        model has insertion sites.
        """
        if clip_tokens.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"clip token width {clip_tokens.shape[-1]} != {self.cfg.input_dim}")
        if knowledge is None:
            if self.plan.visual_sites:
                raise MissingKnowledgeError("model has adapter sites but no knowledge was given")
            knowledge = ABSENT
        x = clip_tokens @ self.in_w + self.in_b
        for i, block in enumerate(self.blocks):
            x = block(x)
            adapter = self.adapters[str(i)] if str(i) in self.adapters else None
            if adapter is not None:
                x = adapter(x, knowledge.f_v, knowledge.f_t, knowledge.t_mask)
        pooled = layer_norm(x).mean(dim=-2)
        if mode == "train" and self.cfg.head_dropout > 0:
            keep = 1.0 - self.cfg.head_dropout
            mask = torch.rand(pooled.shape, generator=dropout_gen, dtype=pooled.dtype) < keep
            pooled = pooled * mask / keep
        elif mode not in ("train", "eval"):
            raise ConfigurationError(f"unknown forward mode {mode!r}")
        return pooled @ self.head_w + self.head_b


def build_model(cfg: BackboneConfig, plan: InsertionPlan, dims: AdapterDims = AdapterDims(),
                seed: int = 0, variant: Variant = "adapt") -> PCAModel:
    return PCAModel(cfg, plan, dims, variant, seed)


def forward(model: PCAModel, clip_tokens: Tensor, knowledge: Knowledge | None = None,
            mode: Literal["train", "eval"] = "eval", seed: int = 0) -> Tensor:
    gen = torch.Generator().manual_seed(seed) if mode == "train" else None
    if mode == "eval":
        with torch.no_grad():
            return model(clip_tokens, knowledge, "eval")
    return model(clip_tokens, knowledge, "train", gen)


def parameter_count(cfg: BackboneConfig, plan: InsertionPlan, dims: AdapterDims,
                    variant: Variant = "adapt") -> int:
    """Closed-form trainable parameter count of :class:`PCAModel`."""
    d, inner = cfg.d_model, cfg.ffn_mult * cfg.d_model
    block = 4 * d * d + 2 * d * inner + inner + d
    total = cfg.input_dim * d + d + cfg.depth * block + d * cfg.class_count + cfg.class_count
    for site in plan.visual_sites:
        total += AdaptBlock.n_params(variant, d, dims, site in plan.textual_sites, cfg.n_heads)
    return total


def loss(logits: Tensor, target: Tensor, label_mode: LabelMode = "single") -> Tensor:
    """Cross-entropy (single) or mean binary cross-entropy with logits (multi).

    ``target`` is a one-hot / multi-hot vector (or batch of them).
    """
    target = torch.as_tensor(target, dtype=logits.dtype)
    if target.shape != logits.shape:
        raise InvalidInputError(f"target shape {tuple(target.shape)} != logits {tuple(logits.shape)}")
    if not torch.all((target == 0) | (target == 1)):
        raise InvalidInputError("targets must be 0/1")
    if label_mode == "single":
        if not torch.all(target.sum(dim=-1) == 1):
            raise InvalidInputError("single-label targets must be one-hot")
        return -(target * F.log_softmax(logits, dim=-1)).sum(dim=-1).mean()
    if label_mode == "multi":
        return F.binary_cross_entropy_with_logits(logits, target)
    raise ConfigurationError(f"unknown label_mode {label_mode!r}")
