"""JSON run configuration.

A config file has up to four sections, each optional and each strict about
unknown keys::

    {"train": {...}, "backbone": {...}, "plan": {...}, "knowledge": {...}}
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from ..adapt import VARIANTS, AdapterDims
from ..backbone import BackboneConfig, InsertionPlan
from ..errors import ConfigurationError

KNOWLEDGE_MODES = ("none", "visual", "textual", "both")


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 32
    warmup_epochs: int = 2
    total_epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sigma: float = 0.5
    prompt_dim: int = 128
    n_prompts: int = 8
    adapter_heads: int = 4
    block_num: int = 3
    variant: str = "adapt"
    seed: int = 0
    label_mode: Literal["single", "multi"] | None = None
    knowledge_mode: str = "both"
    freeze_backbone: bool = False

    def validate(self) -> None:
        if not self.warmup_epochs < self.total_epochs:
            raise ConfigurationError("warmup_epochs must be < total_epochs")
        if self.warmup_epochs < 0:
            raise ConfigurationError("warmup_epochs must be >= 0")
        if not 0.0 <= self.sigma <= 1.0:
            raise ConfigurationError(f"sigma must lie in [0, 1], got {self.sigma}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.knowledge_mode not in KNOWLEDGE_MODES:
            raise ConfigurationError(f"unknown knowledge_mode {self.knowledge_mode!r}")
        if self.label_mode not in (None, "single", "multi"):
            raise ConfigurationError(f"unknown label_mode {self.label_mode!r}")
        if self.batch_size < 1 or self.base_lr < 0 or self.block_num < 0:
            raise ConfigurationError("batch_size must be >= 1, base_lr and block_num >= 0")


@dataclass
class BackboneSection:
    depth: int = 6
    d_model: int = 64
    n_heads: int = 4
    head_dropout: float = 0.5
    ffn_mult: int = 4


@dataclass
class PlanSection:
    """Explicit insertion sites; ``None`` means the default plan for ``train.block_num``."""

    visual_sites: list[int] | None = None
    textual_sites: list[int] | None = None


@dataclass
class KnowledgeSection:
    enhancer: dict = field(default_factory=lambda: {"kind": "external", "source": "enhanced"})
    extractor: dict = field(default_factory=lambda: {"kind": "mock", "seed": 0, "feature_dim": 32,
                                                     "logit_scale": 32.0})
    text_encoder: dict = field(default_factory=lambda: {"kind": "mock", "seed": 0, "dim": 32,
                                                        "max_text_tokens": 32})
    template: dict = field(default_factory=lambda: {"subject": "A man is", "adverbial": "on the street",
                                                    "joiner": ". "})
    captions: str = "file"
    caption_seed: int = 0
    use_explanations: bool = False


@dataclass
class PCAConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    plan: PlanSection = field(default_factory=PlanSection)
    knowledge: KnowledgeSection = field(default_factory=KnowledgeSection)

    def __post_init__(self):
        self.train.validate()
        if self.knowledge.captions not in ("file", "mock"):
            raise ConfigurationError("knowledge.captions must be 'file' or 'mock'")

    # ----------------------------------------------------------- serialisation

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PCAConfig":
        _check_keys(d, {f.name for f in dataclasses.fields(cls)}, "config")
        sections = {}
        for f in dataclasses.fields(cls):
            sub = d.get(f.name, {})
            if not isinstance(sub, dict):
                raise ConfigurationError(f"config section {f.name!r} must be an object")
            klass = f.default_factory().__class__
            _check_keys(sub, {g.name for g in dataclasses.fields(klass)}, f.name)
            sections[f.name] = klass(**sub)
        return cls(**sections)

    @classmethod
    def load(cls, path: str | Path) -> "PCAConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{p}: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{p}: top level must be an object")
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def replace(self, **sections: dict) -> "PCAConfig":
        """Copy with per-section field overrides, e.g. ``replace(train={"sigma": 0.7})``."""
        d = self.to_dict()
        for name, overrides in sections.items():
            d[name].update(overrides)
        return PCAConfig.from_dict(d)

    # ------------------------------------------------------------- derivation

    def config_hash(self) -> str:
        return _hash(self.to_dict())

    def cache_hash(self, label_mode: str) -> str:
        """Hash of every setting the knowledge cache depends on."""
        return _hash({"sigma": self.train.sigma, "label_mode": label_mode,
                      "knowledge": dataclasses.asdict(self.knowledge)})

    def adapter_dims(self) -> AdapterDims:
        return AdapterDims(
            visual_dim=int(self.knowledge.extractor.get("feature_dim", 32)),
            text_dim=int(self.knowledge.text_encoder.get("dim", 32)),
            n_prompts=self.train.n_prompts,
            prompt_dim=self.train.prompt_dim,
            n_heads=self.train.adapter_heads,
        )

    def backbone_config(self, class_count: int, input_dim: int, label_mode: str) -> BackboneConfig:
        b = self.backbone
        return BackboneConfig(class_count=class_count, input_dim=input_dim, depth=b.depth,
                              d_model=b.d_model, n_heads=b.n_heads, head_dropout=b.head_dropout,
                              label_mode=label_mode, ffn_mult=b.ffn_mult)

    def insertion_plan(self) -> InsertionPlan:
        p = self.plan
        if p.visual_sites is None:
            if p.textual_sites is not None:
                raise ConfigurationError("textual_sites given without visual_sites")
            plan = InsertionPlan.default(self.backbone.depth, self.train.block_num)
        else:
            textual = p.textual_sites if p.textual_sites is not None else sorted(p.visual_sites)[-1:]
            plan = InsertionPlan(tuple(p.visual_sites), tuple(textual))
        plan.validate(self.backbone.depth)
        return plan


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _hash(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:16]
