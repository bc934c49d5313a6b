import math

import numpy as np
import pytest
import torch

from pca.adapt import VARIANTS, AdapterDims
from pca.backbone import (ABSENT, BackboneConfig, InsertionPlan, Knowledge, build_model, default_sites, forward,
                          loss, parameter_count)
from pca.errors import ConfigurationError, InvalidInputError, MissingKnowledgeError, ShapeError
from pca.harness.gradsuite import SMALL_DIMS, check_module, model_fixture

import oracles

D = torch.float64
CFG = BackboneConfig(class_count=4, input_dim=6, depth=3, d_model=8, n_heads=2)


def knowledge(seed=0, batch=2):
    g = torch.Generator().manual_seed(seed)
    return Knowledge(torch.randn(batch, 4, 5, generator=g, dtype=D), torch.randn(batch, 3, 4, generator=g, dtype=D))


def tokens(seed=0, batch=2, t=5):
    return torch.randn(batch, t, 6, generator=torch.Generator().manual_seed(seed), dtype=D)


def model(plan=InsertionPlan((1, 2), (2,)), variant="adapt", seed=0, cfg=CFG):
    return build_model(cfg, plan, SMALL_DIMS, seed, variant).double()


class TestPlan:
    def test_default_sites(self):
        assert default_sites(6, 3) == (3, 4, 5)
        assert default_sites(6, 1) == (5,)
        assert default_sites(6, 0) == ()
        assert default_sites(4, 4) == (0, 1, 2, 3)
        with pytest.raises(ConfigurationError):
            default_sites(2, 3)

    def test_default_plan_textual_last(self):
        plan = InsertionPlan.default(6, 3)
        assert plan.visual_sites == (3, 4, 5) and plan.textual_sites == (5,)

    def test_textual_must_be_visual(self):
        with pytest.raises(ConfigurationError):
            InsertionPlan((1,), (2,))

    def test_site_outside_depth(self):
        with pytest.raises(ConfigurationError):
            model(InsertionPlan((3,)))


class TestModel:
    def test_seed_determinism(self):
        a, b = model(seed=4), model(seed=4)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_empty_plan_has_no_adapter_parameters(self):
        m = model(InsertionPlan())
        assert len(list(m.adapters.parameters())) == 0
        assert sum(p.numel() for p in m.parameters()) == parameter_count(CFG, InsertionPlan(), SMALL_DIMS)

    def test_backbone_independent_of_adapters(self):
        bare, full = model(InsertionPlan()), model()
        for pa, pb in zip(bare.backbone_parameters(), full.backbone_parameters()):
            assert torch.equal(pa, pb)
        assert torch.equal(bare.head_w, full.head_w)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_zero_gates_ignore_knowledge(self, variant):
        m = model(variant=variant)
        x = tokens()
        assert torch.equal(forward(m, x, knowledge()), forward(m, x, ABSENT))

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_zero_gates_match_adapter_free_model(self, variant):
        x = tokens(3)
        assert torch.equal(forward(model(variant=variant), x, knowledge(1)), forward(model(InsertionPlan()), x))

    def test_missing_knowledge(self):
        with pytest.raises(MissingKnowledgeError):
            model()(tokens(), None)

    def test_input_width(self):
        with pytest.raises(ShapeError):
            model()(torch.zeros(1, 2, 5, dtype=D), ABSENT)

    def test_eval_is_repeatable(self):
        m = model()
        x, k = tokens(), knowledge()
        first = forward(m, x, k)
        for _ in range(10):
            assert torch.equal(forward(m, x, k), first)

    def test_train_dropout_seeded(self):
        m = model()
        x, k = tokens(), knowledge()
        assert torch.equal(forward(m, x, k, "train", 3), forward(m, x, k, "train", 3))
        assert not torch.equal(forward(m, x, k, "train", 3), forward(m, x, k, "eval"))

    def test_depth_one_single_token_oracle(self):
        cfg = BackboneConfig(class_count=3, input_dim=2, depth=1, d_model=4, n_heads=2)
        m = build_model(cfg, InsertionPlan(), SMALL_DIMS, seed=1).double()
        x = torch.tensor([[0.3, -1.2]], dtype=D)
        h = oracles.add(oracles.matmul(x, m.in_w.detach()), [m.in_b.tolist()])
        blk = m.blocks[0]
        n = oracles.layer_norm(h)
        h = oracles.add(h, oracles.attn_of(blk.attn, n, n))
        h = oracles.add(h, oracles.ffn_of(blk.ffn, oracles.layer_norm(h)))
        pooled = oracles.layer_norm(h)
        logits = oracles.add(oracles.matmul(pooled, m.head_w.detach()), [m.head_b.tolist()])[0]
        np.testing.assert_allclose(forward(m, x).numpy(), logits, atol=1e-9)

    @pytest.mark.parametrize("cfg,plan,variant", [
        (CFG, InsertionPlan((1, 2), (2,)), "adapt"),
        (BackboneConfig(5, 3, depth=4, d_model=12, n_heads=3), InsertionPlan((0, 3), (0, 3)), "res_prompt"),
        (BackboneConfig(2, 7, depth=2, d_model=4, n_heads=1), InsertionPlan((1,)), "addition"),
    ])
    def test_parameter_count_formula(self, cfg, plan, variant):
        dims = AdapterDims(5, 4, 3, 8, 2)
        m = build_model(cfg, plan, dims, 0, variant)
        assert sum(p.numel() for p in m.parameters()) == parameter_count(cfg, plan, dims, variant)

    def test_model_grad_check(self):
        m, fn = model_fixture()
        report = check_module(m, fn)
        assert report.passed, report.failures()


class TestLoss:
    def test_uniform_logits_single(self):
        out = loss(torch.zeros(1, 4, dtype=D), torch.tensor([[0, 1, 0, 0]]), "single")
        assert out.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_zero_logits_multi(self):
        out = loss(torch.zeros(2, 3, dtype=D), torch.tensor([[1, 0, 1], [0, 0, 0]]), "multi")
        assert out.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_four_class_oracle(self):
        logits = [2.0, -1.0, 0.5, 0.0]
        expected = -math.log(oracles.softmax_mp(logits)[2])
        out = loss(torch.tensor([logits], dtype=D), torch.tensor([[0, 0, 1, 0]]), "single")
        assert out.item() == pytest.approx(expected, abs=1e-9)

    def test_multi_oracle(self):
        z, y = [1.5, -0.5], [1, 0]
        expected = sum(-(t * math.log(1 / (1 + math.exp(-x))) + (1 - t) * math.log(1 - 1 / (1 + math.exp(-x))))
                       for x, t in zip(z, y)) / 2
        assert loss(torch.tensor([z], dtype=D), torch.tensor([y]), "multi").item() == pytest.approx(expected, abs=1e-9)

    def test_rejects_bad_targets(self):
        with pytest.raises(InvalidInputError):
            loss(torch.zeros(1, 3), torch.tensor([[1, 1, 0]]), "single")
        with pytest.raises(InvalidInputError):
            loss(torch.zeros(1, 3), torch.tensor([[0.5, 0, 0]]), "multi")
        with pytest.raises(InvalidInputError):
            loss(torch.zeros(1, 3), torch.tensor([[1, 0]]), "single")
