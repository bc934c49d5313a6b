"""Chat stage: threshold-gated choice between label prompts and captions, then text encoding."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import (ConfigurationError, ContractViolationError, InvalidInputError,
                     MissingAssetError)

PROMPT_PATH = "prompt_path"
CAPTION_PATH = "caption_path"
DEFAULT_MAX_TEXT_TOKENS = 32

_PUNCT = re.compile(r"[^\w\s]")


@dataclass(frozen=True)
class RouteDecision:
    path: str
    max_score: float
    threshold: float

    def to_dict(self) -> dict:
        return {"path": self.path, "max_score": self.max_score, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RouteDecision":
        return cls(d["path"], float(d["max_score"]), float(d["threshold"]))


@dataclass(frozen=True)
class PromptTemplate:
    subject: str = "A man is"
    adverbial: str = "on the street"
    joiner: str = ". "

    def __post_init__(self):
        if not self.subject.strip():
            raise ConfigurationError("prompt subject must be non-empty")

    def render(self, label: str) -> str:
        parts = [self.subject, label, self.adverbial]
        return " ".join(p for p in parts if p)


def route_knowledge(s: Sequence[float], sigma: float) -> RouteDecision:
    """Prompt path when ``max(s) >= sigma``, caption path otherwise."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise InvalidInputError("score vector is empty")
    if not 0.0 <= sigma <= 1.0:
        raise InvalidInputError(f"sigma must lie in [0, 1], got {sigma}")
    top = float(s.max())
    return RouteDecision(PROMPT_PATH if top >= sigma else CAPTION_PATH, top, float(sigma))


def candidate_labels(s: Sequence[float], sigma: float, label_names: Sequence[str],
                     label_mode: Literal["single", "multi"] = "single") -> list[str]:
    """Labels to expand: top-1 in single mode, every score >= sigma in multi mode.

    Ordered by descending score; equal scores keep class-index order.
    """
    s = np.asarray(s, dtype=np.float64)
    if len(label_names) != s.size:
        raise InvalidInputError(f"{len(label_names)} label names for {s.size} scores")
    if s.size == 0 or s.max() < sigma:
        raise ContractViolationError("prompt expansion requested although max(S) < sigma")
    order = np.argsort(-s, kind="stable")
    if label_mode == "single":
        return [label_names[order[0]]]
    return [label_names[i] for i in order if s[i] >= sigma]


def expand_prompt(s: Sequence[float], sigma: float, label_names: Sequence[str],
                  template: PromptTemplate = PromptTemplate(),
                  label_mode: Literal["single", "multi"] = "single") -> str:
    labels = candidate_labels(s, sigma, label_names, label_mode)
    return template.joiner.join(template.render(label) for label in labels)


def summarize_explanations(candidates: Sequence[str], explanations: Mapping[str, str]) -> str:
    missing = [c for c in candidates if c not in explanations]
    if missing:
        raise MissingAssetError(f"no explanation for label(s): {', '.join(missing)}")
    return " ".join(explanations[c] for c in candidates)


def load_json_map(path: str | Path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise MissingAssetError(f"file not found: {p}")
    data = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise InvalidInputError(f"{p} must hold a JSON object of strings")
    return data


def _keyed_rng(*key) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(map(str, key)).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class FileCaptionProvider:
    def __init__(self, captions: Mapping[str, str]):
        self.captions = dict(captions)

    @classmethod
    def from_file(cls, path: str | Path) -> "FileCaptionProvider":
        return cls(load_json_map(path))

    def caption(self, sample_id: str) -> str:
        try:
            return self.captions[sample_id]
        except KeyError:
            raise MissingAssetError(f"no caption for sample {sample_id!r}") from None


_MOCK_WORDS = ("a", "person", "man", "woman", "is", "walking", "standing", "moving",
               "near", "the", "camera", "street", "room", "dark", "slowly", "object")


class MockCaptionProvider:
    def __init__(self, seed: int = 0, length: int = 8):
        self.seed = seed
        self.length = length

    def caption(self, sample_id: str) -> str:
        rng = _keyed_rng("caption", self.seed, sample_id)
        return " ".join(rng.choice(_MOCK_WORDS, size=self.length))


def get_caption(sample_id: str, provider) -> str:
    return provider.caption(sample_id)


def tokenize(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class TextEncoderSpec:
    kind: Literal["mock", "file_backed"] = "mock"
    seed: int = 0
    dim: int = 32
    max_text_tokens: int = DEFAULT_MAX_TEXT_TOKENS
    cache_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("mock", "file_backed"):
            raise ConfigurationError(f"unknown text encoder kind {self.kind!r}")
        if self.dim < 1 or self.max_text_tokens < 1:
            raise ConfigurationError("text encoder dim and max_text_tokens must be positive")
        if self.kind == "file_backed" and not self.cache_path:
            raise ConfigurationError("file_backed text encoder needs cache_path")

    def to_dict(self) -> dict:
        if self.kind == "mock":
            return {"kind": "mock", "seed": self.seed, "dim": self.dim,
                    "max_text_tokens": self.max_text_tokens}
        return {"kind": "file_backed", "cache_path": str(self.cache_path)}


def token_vector(token: str, seed: int, dim: int) -> np.ndarray:
    """Standard-normal vector keyed by ``(seed, token)``."""
    return _keyed_rng("token", seed, token).standard_normal(dim)


class MockTextEncoder:
    def __init__(self, seed: int = 0, dim: int = 32, max_text_tokens: int = DEFAULT_MAX_TEXT_TOKENS):
        self.seed = seed
        self.dim = dim
        self.max_text_tokens = max_text_tokens
        self._memo: dict[str, np.ndarray] = {}

    def _vec(self, token: str) -> np.ndarray:
        v = self._memo.get(token)
        if v is None:
            v = self._memo[token] = token_vector(token, self.seed, self.dim).astype(np.float32)
        return v

    def encode(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise InvalidInputError("cannot encode empty text")
        return np.stack([self._vec(t) for t in tokens[: self.max_text_tokens]])


class FileBackedTextEncoder:
    """Looks encoded text up by exact string in a knowledge cache."""

    def __init__(self, cache_path: str | Path):
        from .harness.cache import KnowledgeCache

        self.cache = KnowledgeCache.open(cache_path)
        self._by_text = {b["text"]: b["sample_id"] for b in self.cache.entries}

    def encode(self, text: str) -> np.ndarray:
        if not tokenize(text):
            raise InvalidInputError("cannot encode empty text")
        if text not in self._by_text:
            raise MissingAssetError(f"no cached text features for {text[:40]!r}")
        return self.cache.read_text_features(self._by_text[text])


def resolve_encoder(spec: TextEncoderSpec):
    if spec.kind == "mock":
        return MockTextEncoder(spec.seed, spec.dim, spec.max_text_tokens)
    return FileBackedTextEncoder(spec.cache_path)


def encode_text(text: str, encoder) -> np.ndarray:
    if isinstance(encoder, TextEncoderSpec):
        encoder = resolve_encoder(encoder)
    return encoder.encode(text)


@dataclass
class TextKnowledge:
    text: str
    f_t: np.ndarray
    source: RouteDecision


def chat(s: Sequence[float], sample_id: str, *, sigma: float, label_names: Sequence[str],
         caption_provider, encoder, template: PromptTemplate = PromptTemplate(),
         label_mode: Literal["single", "multi"] = "single",
         explanations: Mapping[str, str] | None = None) -> TextKnowledge:
    """Route, produce text on the chosen path, and encode it.

    With ``explanations`` given, the prompt path concatenates the candidate
    labels' explanations instead of rendering the template.
    """
    decision = route_knowledge(s, sigma)
    if decision.path == PROMPT_PATH:
        if explanations is not None:
            text = summarize_explanations(candidate_labels(s, sigma, label_names, label_mode), explanations)
        else:
            text = expand_prompt(s, sigma, label_names, template, label_mode)
    else:
        text = get_caption(sample_id, caption_provider)
    return TextKnowledge(text, encode_text(text, encoder), decision)
