"""Percept stage: enhance a clip, then extract visual knowledge tokens and scores."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from . import tensorio
from .errors import ConfigurationError, InvalidInputError, MissingAssetError, ShapeError

DEFAULT_FRAME_COUNT = 8
LabelMode = Literal["single", "multi"]

# Pixel statistics are mapped to roughly [-1, 1]: channel means are centred
# on mid-grey, channel variances on the variance of a half-range checkerboard.
MEAN_CENTER = 0.5
MEAN_SCALE = 2.0
VAR_CENTER = 1.0 / 32.0
VAR_SCALE = 32.0


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, C), values in [0, 1]
    sample_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[0] < 1:
            raise ShapeError(f"clip frames must be (T, H, W, C) with T >= 1, got {f.shape}")
        if not np.isfinite(f).all() or f.min() < 0.0 or f.max() > 1.0:
            raise InvalidInputError(f"clip {self.sample_id!r} has pixel values outside [0, 1]")
        self.frames = f

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[-1]


def uniform_sample(frames: np.ndarray, count: int = DEFAULT_FRAME_COUNT) -> np.ndarray:
    """Pick ``count`` frames at uniform spacing (segment centres)."""
    n = frames.shape[0]
    if n == count:
        return frames
    idx = np.floor((np.arange(count) + 0.5) * n / count).astype(int)
    return frames[np.clip(idx, 0, n - 1)]


def load_clip(path: str | Path, sample_id: str = "", frame_count: int | None = DEFAULT_FRAME_COUNT) -> VideoClip:
    frames = tensorio.load(path)
    if frame_count is not None:
        frames = uniform_sample(frames, frame_count)
    return VideoClip(frames, sample_id)


# ---------------------------------------------------------------- enhancement

def gamma_correct(clip: VideoClip, gamma_rate: float) -> VideoClip:
    """Per-pixel power law ``x ** (1 / gamma_rate)``; brightens for rates above 1."""
    if not gamma_rate > 0:
        raise InvalidInputError(f"gamma_rate must be > 0, got {gamma_rate}")
    if gamma_rate == 1.0:
        return VideoClip(clip.frames.copy(), clip.sample_id)
    out = np.power(clip.frames, 1.0 / gamma_rate)
    return VideoClip(np.clip(out, 0.0, 1.0).astype(clip.frames.dtype), clip.sample_id)


def mask_fuse(clip: VideoClip, masks: VideoClip) -> VideoClip:
    """Average fusion of a mask video into the clip."""
    if clip.frames.shape != masks.frames.shape:
        raise ShapeError(f"mask shape {masks.frames.shape} != clip shape {clip.frames.shape}")
    out = 0.5 * clip.frames + 0.5 * masks.frames
    return VideoClip(out.astype(clip.frames.dtype), clip.sample_id)


@dataclass(frozen=True)
class EnhancerSpec:
    kind: Literal["identity", "gamma", "mask_fusion", "external"] = "identity"
    gamma_rate: float = 1.8
    source: str | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "gamma", "mask_fusion", "external"):
            raise ConfigurationError(f"unknown enhancer kind {self.kind!r}")
        if self.kind == "gamma" and not self.gamma_rate > 0:
            raise ConfigurationError(f"gamma_rate must be > 0, got {self.gamma_rate}")
        if self.kind in ("mask_fusion", "external"):
            if not self.source or not Path(self.source).is_dir():
                raise MissingAssetError(f"{self.kind} enhancer source directory not found: {self.source}")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "gamma":
            d["gamma_rate"] = self.gamma_rate
        if self.source is not None and self.kind in ("mask_fusion", "external"):
            d["source"] = str(self.source)
        return d


def enhance(clip: VideoClip, spec: EnhancerSpec) -> VideoClip:
    if spec.kind == "identity":
        return clip
    if spec.kind == "gamma":
        return gamma_correct(clip, spec.gamma_rate)
    suffix = ".mask" if spec.kind == "mask_fusion" else ".clip"
    path = Path(spec.source) / f"{clip.sample_id}{suffix}"
    if not path.is_file():
        raise MissingAssetError(f"{spec.kind} enhancer has no asset for sample {clip.sample_id!r}")
    other = load_clip(path, clip.sample_id, frame_count=clip.frame_count)
    if spec.kind == "mask_fusion":
        return mask_fuse(clip, other)
    return other


# ----------------------------------------------------------------- extraction

def pixel_statistics(frames: np.ndarray) -> np.ndarray:
    """Per-frame normalised channel means and variances, shape ``(T, 2C)``."""
    f = np.asarray(frames, dtype=np.float64)
    means = f.mean(axis=(1, 2))
    var = f.var(axis=(1, 2))
    return np.concatenate([(means - MEAN_CENTER) * MEAN_SCALE, (var - VAR_CENTER) * VAR_SCALE], axis=1)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _logistic(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class PerceptOutput:
    f_v: np.ndarray  # (T, feature_dim)
    s: np.ndarray  # (class_count,)


@dataclass(frozen=True)
class VisualExtractorSpec:
    kind: Literal["mock", "file_backed"] = "mock"
    seed: int = 0
    feature_dim: int = 32
    logit_scale: float = 32.0
    cache_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("mock", "file_backed"):
            raise ConfigurationError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "mock" and self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be positive")
        if self.kind == "file_backed" and not self.cache_path:
            raise ConfigurationError("file_backed extractor needs cache_path")

    def to_dict(self) -> dict:
        if self.kind == "mock":
            return {"kind": "mock", "seed": self.seed, "feature_dim": self.feature_dim,
                    "logit_scale": self.logit_scale}
        return {"kind": "file_backed", "cache_path": str(self.cache_path)}


class MockVisualExtractor:
    """Seeded stand-in for a video foundation model.

    Each frame's pixel statistics are projected by a fixed random matrix to one
    knowledge token; the scores come from a zero-bias random linear head over
    the frame-averaged token.
    """

    def __init__(self, seed: int, feature_dim: int, class_count: int, logit_scale: float = 32.0):
        self.seed = seed
        self.feature_dim = feature_dim
        self.class_count = class_count
        self.logit_scale = logit_scale
        self._proj: dict[int, np.ndarray] = {}
        self._head = (np.random.default_rng([seed, 2, feature_dim, class_count])
                      .standard_normal((feature_dim, class_count))
                      * (logit_scale / np.sqrt(feature_dim)))

    def projection(self, stat_dim: int) -> np.ndarray:
        if stat_dim not in self._proj:
            rng = np.random.default_rng([self.seed, 1, stat_dim, self.feature_dim])
            self._proj[stat_dim] = rng.standard_normal((stat_dim, self.feature_dim)) / np.sqrt(stat_dim)
        return self._proj[stat_dim]

    @property
    def head(self) -> np.ndarray:
        return self._head

    def logit_map(self, stat_dim: int) -> np.ndarray:
        """Linear map from frame-averaged statistics to logits, ``(stat_dim, class_count)``."""
        return self.projection(stat_dim) @ self._head

    def extract(self, clip: VideoClip, label_mode: LabelMode = "single") -> PerceptOutput:
        stats = pixel_statistics(clip.frames)
        f_v = stats @ self.projection(stats.shape[1])
        logits = f_v.mean(axis=0) @ self._head
        s = _softmax(logits) if label_mode == "single" else _logistic(logits)
        return PerceptOutput(f_v.astype(np.float32), s.astype(np.float32))


class FileBackedVisualExtractor:
    """Reads ``(F_V, S)`` for a sample from a knowledge cache directory."""

    def __init__(self, cache_path: str | Path):
        from .harness.cache import KnowledgeCache

        self.cache = KnowledgeCache.open(cache_path)

    def extract(self, clip: VideoClip, label_mode: LabelMode = "single") -> PerceptOutput:
        f_v, s = self.cache.read_visual(clip.sample_id)
        return PerceptOutput(f_v, s)


def resolve_extractor(spec: VisualExtractorSpec, class_count: int | None = None):
    if spec.kind == "mock":
        if class_count is None:
            raise ConfigurationError("mock extractor needs the class count")
        return MockVisualExtractor(spec.seed, spec.feature_dim, class_count, spec.logit_scale)
    return FileBackedVisualExtractor(spec.cache_path)


def extract_visual_knowledge(clip: VideoClip, extractor, label_mode: LabelMode = "single",
                             class_count: int | None = None) -> PerceptOutput:
    """Run an extractor (a spec or a resolved extractor object) on an enhanced clip."""
    if label_mode not in ("single", "multi"):
        raise ConfigurationError(f"unknown label_mode {label_mode!r}")
    if isinstance(extractor, VisualExtractorSpec):
        extractor = resolve_extractor(extractor, class_count)
    out = extractor.extract(clip, label_mode)
    if out.f_v.shape[0] != clip.frame_count:
        raise ShapeError(f"expected {clip.frame_count} knowledge tokens, got {out.f_v.shape[0]}")
    if class_count is not None and out.s.shape != (class_count,):
        raise ShapeError(f"score vector has shape {out.s.shape}, expected ({class_count},)")
    return out
