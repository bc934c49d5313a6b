"""Double-precision gradient-check fixtures for the adapter and the full model."""
from __future__ import annotations

import torch

from ..adapt import AdaptBlock, AdapterDims
from ..backbone import BackboneConfig, InsertionPlan, Knowledge, build_model, loss
from ..nn import GradCheckReport, grad_check

SMALL_DIMS = AdapterDims(visual_dim=5, text_dim=4, n_prompts=3, prompt_dim=8, n_heads=2)


def _gates(module: torch.nn.Module, w1: float, w2: float) -> None:
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, AdaptBlock):
                m.w1.fill_(w1)
                if m.textual:
                    m.w2.fill_(w2)


def model_fixture(seed: int = 0, variant: str = "adapt", gates: tuple[float, float] = (0.8, -0.6)):
    """Depth-2 model, sites at both blocks, textual knowledge at the last, float64.

    Returns ``(model, loss_fn)``; gates are set away from zero so every
    adapter weight receives gradient.
    """
    cfg = BackboneConfig(class_count=3, input_dim=6, depth=2, d_model=8, n_heads=2, head_dropout=0.0)
    model = build_model(cfg, InsertionPlan((0, 1), (1,)), SMALL_DIMS, seed, variant).double()
    _gates(model, *gates)
    g = torch.Generator().manual_seed(1000 + seed)
    tokens = torch.randn(2, 4, 6, generator=g, dtype=torch.float64)
    f_v = torch.randn(2, 4, 5, generator=g, dtype=torch.float64)
    f_t = torch.randn(2, 5, 4, generator=g, dtype=torch.float64)
    t_mask = torch.tensor([[True] * 5, [True] * 3 + [False] * 2])
    target = torch.tensor([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], dtype=torch.float64)
    know = Knowledge(f_v, f_t, t_mask)

    def loss_fn():
        return loss(model(tokens, know, "eval"), target, "single")

    return model, loss_fn


def adapt_block_fixture(seed: int = 0, variant: str = "adapt", gates: tuple[float, float] = (0.7, 0.4)):
    """One textual-capable adapter on 4-token inputs, float64. Returns ``(block, loss_fn)``."""
    g = torch.Generator().manual_seed(seed)
    block = AdaptBlock(variant, 8, SMALL_DIMS, True, g, block_heads=2).double()
    _gates(block, *gates)
    f_b = torch.randn(4, 8, generator=g, dtype=torch.float64)
    f_v = torch.randn(4, 5, generator=g, dtype=torch.float64)
    f_t = torch.randn(4, 4, generator=g, dtype=torch.float64)
    probe = torch.randn(4, 8, generator=g, dtype=torch.float64)

    def loss_fn():
        out = block(f_b, f_v, f_t)
        return (out * probe).sum() + 0.5 * (out ** 2).sum()

    return block, loss_fn


def check_module(module: torch.nn.Module, loss_fn, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    return grad_check(loss_fn, list(module.named_parameters()), eps=eps, tol=tol)


def run_suite(eps: float = 1e-5, tol: float = 1e-4) -> dict[str, GradCheckReport]:
    reports = {}
    for variant in ("addition", "res_cross", "res_prompt", "adapt"):
        block, fn = adapt_block_fixture(variant=variant)
        reports[f"adapt_block[{variant}]"] = check_module(block, fn, eps, tol)
    model, fn = model_fixture()
    reports["model[depth=2,sites=2]"] = check_module(model, fn, eps, tol)
    return reports
