"""Knowledge adapters: compress external knowledge with learnable prompts, fuse into block features.

Four structures are available, from simplest to full:

``addition``    f_b + w1 * proj(mean(f_v)) + w2 * proj(mean(f_t))
``res_cross``   f_b + w1 * CA(LN f_b, f_v) + w2 * CA(LN f_b, f_t)
``res_prompt``  knowledge compressed by CA(LN p_raw, f), then fused with CA(LN f_b, .)
``adapt``       as res_prompt with residual self-attention and FFN after compression
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch
from torch import Tensor, nn

from .errors import ConfigurationError, ShapeError
from .nn import Attention, FeedForward, init_weight, layer_norm

VARIANTS = ("addition", "res_cross", "res_prompt", "adapt")
Variant = Literal["addition", "res_cross", "res_prompt", "adapt"]


@dataclass(frozen=True)
class AdapterDims:
    visual_dim: int = 32
    text_dim: int = 32
    n_prompts: int = 8
    prompt_dim: int = 128
    n_heads: int = 4
    ffn_mult: int = 4

    def __post_init__(self):
        if min(self.visual_dim, self.text_dim, self.n_prompts, self.prompt_dim, self.n_heads) < 1:
            raise ConfigurationError("adapter dims must be positive")
        if self.prompt_dim < 2:
            raise ConfigurationError("prompt_dim must be >= 2 for the prompt layer norm")
        if self.prompt_dim % self.n_heads:
            raise ConfigurationError(f"prompt_dim {self.prompt_dim} not divisible by n_heads {self.n_heads}")


def _masked_mean(f: Tensor, mask: Tensor | None) -> Tensor:
    if mask is None:
        return f.mean(dim=-2)
    w = mask.to(f.dtype).unsqueeze(-1)
    return (f * w).sum(dim=-2) / w.sum(dim=-2)


class AdaptBlock(nn.Module):
    """Per-insertion-site adapter parameters and forward pass.

    ``textual`` controls whether this site carries textual-branch weights
    (projection or attentions and the ``w2`` gate).
    """

    def __init__(self, variant: Variant, block_dim: int, dims: AdapterDims, textual: bool,
                 gen: torch.Generator, block_heads: int = 4):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown structure variant {variant!r}")
        if block_dim % block_heads:
            raise ConfigurationError(f"block dim {block_dim} not divisible by {block_heads} heads")
        self.variant = variant
        self.block_dim = block_dim
        self.dims = dims
        self.textual = textual
        d, p = block_dim, dims.prompt_dim
        kdims = {"visual": dims.visual_dim, "textual": dims.text_dim}
        modalities = ("visual", "textual") if textual else ("visual",)

        if variant in ("res_prompt", "adapt"):
            self.p_raw = nn.Parameter(torch.randn(dims.n_prompts, p, generator=gen))
        self.proj = nn.ParameterDict()
        self.compress_attn = nn.ModuleDict()
        self.fuse_attn = nn.ModuleDict()
        for m in modalities:
            if variant == "addition":
                self.proj[f"{m}_w"] = nn.Parameter(init_weight(gen, kdims[m], d))
                self.proj[f"{m}_b"] = nn.Parameter(torch.zeros(d))
            elif variant == "res_cross":
                self.fuse_attn[m] = Attention(d, kdims[m], d, block_heads, gen)
            else:
                self.compress_attn[m] = Attention(p, kdims[m], p, dims.n_heads, gen)
                self.fuse_attn[m] = Attention(d, p, d, block_heads, gen)
        if variant == "adapt":
            self.self_attn = Attention(p, p, p, dims.n_heads, gen)
            self.ffn = FeedForward(p, gen, dims.ffn_mult)
        self.w1 = nn.Parameter(torch.zeros(()))
        if textual:
            self.w2 = nn.Parameter(torch.zeros(()))

    # ------------------------------------------------------------------ pieces

    def prompts(self) -> Tensor:
        return layer_norm(self.p_raw)

    def compress(self, f: Tensor, modality: str, mask: Tensor | None = None) -> Tensor:
        """``(..., n_k, d_k) -> (..., n_prompts, prompt_dim)``."""
        if modality not in self.compress_attn:
            raise ShapeError(f"no {modality} compression weights at this site ({self.variant})")
        attn = self.compress_attn[modality]
        if f.shape[-1] != attn.w_k.shape[0]:
            raise ShapeError(f"{modality} knowledge width {f.shape[-1]} != {attn.w_k.shape[0]}")
        h = attn(self.prompts(), f, mask)
        if h.ndim < f.ndim:
            h = h.expand(*f.shape[:-2], *h.shape)
        if self.variant == "adapt":
            n = layer_norm(h)
            h = h + self.self_attn(n, n)
            h = h + self.ffn(layer_norm(h))
        return h

    def fuse(self, f_b: Tensor, f_v_tilde: Tensor | None, f_t_tilde: Tensor | None,
             t_mask: Tensor | None = None) -> Tensor:
        if f_b.shape[-1] != self.block_dim:
            raise ShapeError(f"block feature width {f_b.shape[-1]} != {self.block_dim}")
        q = layer_norm(f_b)
        out = f_b
        if f_v_tilde is not None:
            out = out + self.w1 * self.fuse_attn["visual"](q, f_v_tilde)
        if f_t_tilde is not None and self.textual:
            out = out + self.w2 * self.fuse_attn["textual"](q, f_t_tilde, t_mask)
        return out

    def _project(self, f: Tensor, modality: str, mask: Tensor | None) -> Tensor:
        w, b = self.proj[f"{modality}_w"], self.proj[f"{modality}_b"]
        if f.shape[-1] != w.shape[0]:
            raise ShapeError(f"{modality} knowledge width {f.shape[-1]} != {w.shape[0]}")
        return (_masked_mean(f, mask) @ w + b).unsqueeze(-2)

    # ----------------------------------------------------------------- forward

    def forward(self, f_b: Tensor, f_v: Tensor | None = None, f_t: Tensor | None = None,
                t_mask: Tensor | None = None) -> Tensor:
        """Fuse whichever knowledge modalities are given into ``f_b``.

        ``t_mask`` marks valid textual tokens when ``f_t`` is padded.
        Textual knowledge is ignored at sites built without a textual branch.
        """
        if f_b.shape[-1] != self.block_dim:
            raise ShapeError(f"block feature width {f_b.shape[-1]} != {self.block_dim}")
        if not self.textual:
            f_t = None
        v = self.variant
        if v == "addition":
            out = f_b
            if f_v is not None:
                out = out + self.w1 * self._project(f_v, "visual", None)
            if f_t is not None:
                out = out + self.w2 * self._project(f_t, "textual", t_mask)
            return out
        if v == "res_cross":
            return self.fuse(f_b, f_v, f_t, t_mask)
        f_v_tilde = self.compress(f_v, "visual") if f_v is not None else None
        f_t_tilde = self.compress(f_t, "textual", t_mask) if f_t is not None else None
        return self.fuse(f_b, f_v_tilde, f_t_tilde)

    @staticmethod
    def n_params(variant: Variant, block_dim: int, dims: AdapterDims, textual: bool,
                 block_heads: int = 4) -> int:
        """Closed-form parameter count for one site."""
        d, p = block_dim, dims.prompt_dim
        kdims = [dims.visual_dim] + ([dims.text_dim] if textual else [])
        gates = 1 + int(textual)
        if variant == "addition":
            return sum(k * d + d for k in kdims) + gates
        if variant == "res_cross":
            return sum(d * d + 2 * k * d + d * d for k in kdims) + gates
        total = dims.n_prompts * p + gates
        total += sum((p * p + 2 * k * p + p * p) + (d * d + 2 * p * d + d * d) for k in kdims)
        if variant == "adapt":
            inner = dims.ffn_mult * p
            total += 4 * p * p + 2 * p * inner + inner + p
        return total


def compress_knowledge(params: AdaptBlock, f: Tensor, modality: Literal["visual", "textual"],
                       mask: Tensor | None = None) -> Tensor:
    return params.compress(f, modality, mask)


def fuse_into_block(params: AdaptBlock, f_b: Tensor, f_v_tilde: Tensor,
                    f_t_tilde: Tensor | None = None) -> Tensor:
    return params.fuse(f_b, f_v_tilde, f_t_tilde)


def variant_forward(variant: Variant, params: AdaptBlock, f_b: Tensor, f_v: Tensor | None,
                    f_t: Tensor | None = None, t_mask: Tensor | None = None) -> Tensor:
    if variant != params.variant:
        raise ConfigurationError(f"parameters were built for {params.variant!r}, not {variant!r}")
    return params(f_b, f_v, f_t, t_mask)
