"""Synthetic multimodal recognition task.

Raw clips carry a weak label signal in their per-frame channel statistics.
The pre-enhanced clips carry a strong "knowledge" signal: their statistics
are chosen so that the mock visual extractor's scores peak on a planted
class, which equals the true label with probability ``informativeness`` and
is otherwise drawn uniformly from all classes. Captions follow the same
rule, so textual knowledge is informative on both routing paths.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensorio
from ..errors import ConfigurationError
from ..percept import MEAN_CENTER, MEAN_SCALE, VAR_CENTER, VAR_SCALE, MockVisualExtractor

ACTION_NAMES = ("walking", "running", "opening", "closing", "sitting", "standing", "carrying",
                "talking", "riding", "pushing", "pulling", "waving", "jumping", "throwing",
                "reading", "drinking")

# Normalised-statistics box in which every frame stays a valid [0, 1] image
# under the checkerboard rendering (mean in [0.25, 0.75], std <= 0.25).
MEAN_BOUND = 0.5
VAR_BOUND = 1.0


@dataclass
class SyntheticTaskSpec:
    class_count: int = 8
    splits: dict = field(default_factory=lambda: {"train": 400, "val": 100})
    frame_count: int = 8
    height: int = 8
    width: int = 8
    channels: int | None = None
    informativeness: float = 0.9
    seed: int = 0
    label_mode: str = "single"
    raw_signal: float = 0.35
    raw_noise: float = 0.6
    knowledge_margin: float = 4.0
    knowledge_noise: float = 0.02
    extractor_seed: int = 0
    feature_dim: int = 32
    logit_scale: float = 32.0
    emit_masks: bool = True

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigurationError("class_count must be >= 2")
        if not 0.0 <= self.informativeness <= 1.0:
            raise ConfigurationError("informativeness must lie in [0, 1]")
        if (self.height * self.width) % 2:
            raise ConfigurationError("height * width must be even")
        if self.label_mode not in ("single", "multi"):
            raise ConfigurationError(f"unknown label_mode {self.label_mode!r}")
        if self.channels is None:
            self.channels = max(3, math.ceil(self.class_count / 2))
        if any(n < 0 for n in self.splits.values()):
            raise ConfigurationError("split sizes must be >= 0")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticTaskSpec":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown key(s) in synthetic spec: {', '.join(sorted(unknown))}")
        return cls(**d)

    def label_names(self) -> list[str]:
        names = list(ACTION_NAMES[: self.class_count])
        names += [f"action{i}" for i in range(len(names), self.class_count)]
        return names


def _box(channels: int) -> np.ndarray:
    return np.r_[np.full(channels, MEAN_BOUND), np.full(channels, VAR_BOUND)]


def knowledge_targets(spec: SyntheticTaskSpec) -> tuple[np.ndarray, float]:
    """Per-class normalised statistics the extractor scores as that class.

    Solves ``stats @ M = margin * (e_k - 1/K)`` by pseudo-inverse, where ``M``
    is the extractor's statistics-to-logit map, then shrinks uniformly to fit
    the valid box (leaving room for noise). Returns ``(targets (K, 2C), margin)``.
    """
    k, c = spec.class_count, spec.channels
    mock = MockVisualExtractor(spec.extractor_seed, spec.feature_dim, k, spec.logit_scale)
    m = mock.logit_map(2 * c)
    z = spec.knowledge_margin * (np.eye(k) - 1.0 / k)
    x = z @ np.linalg.pinv(m)
    room = 0.9 * _box(c) / np.maximum(np.abs(x).max(axis=0), 1e-12)
    shrink = min(1.0, float(room.min()))
    return x * shrink, spec.knowledge_margin * shrink


def render_frames(stats: np.ndarray, height: int, width: int) -> np.ndarray:
    """Frames whose channel means and variances equal ``stats`` exactly.

    ``stats`` is ``(T, 2C)`` in normalised units; each channel is a
    checkerboard of ``mean +/- std``.
    """
    t, two_c = stats.shape
    c = two_c // 2
    mean = stats[:, :c] / MEAN_SCALE + MEAN_CENTER
    var = np.maximum(stats[:, c:] / VAR_SCALE + VAR_CENTER, 0.0)
    # balanced whenever height * width is even
    sign = np.where((np.add.outer(np.arange(height), np.arange(width)) % 2) == 0, 1.0, -1.0)
    frames = mean[:, None, None, :] + np.sqrt(var)[:, None, None, :] * sign[None, :, :, None]
    return np.clip(frames, 0.0, 1.0)


def _caption(name: str) -> str:
    return f"a person is {name} near the camera"


def _explanation(name: str) -> str:
    return f"{name} is an action where the subject keeps {name} for most of the clip"


def generate_synthetic(spec: SyntheticTaskSpec, out: str | Path) -> Path:
    out = Path(out)
    for sub in ("splits", "clips", "enhanced") + (("masks",) if spec.emit_masks else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    k, c = spec.class_count, spec.channels
    box = _box(c)
    names = spec.label_names()
    prototypes = rng.uniform(-1.0, 1.0, size=(k, 2 * c)) * box
    targets, margin = knowledge_targets(spec)
    captions: dict[str, str] = {}

    for split, count in spec.splits.items():
        rows = []
        for i in range(count):
            sid = f"{split}_{i:05d}"
            labels = [int(rng.integers(k))]
            if spec.label_mode == "multi" and rng.random() < 0.5:
                other = int(rng.integers(k - 1))
                labels.append(other + (other >= labels[0]))
            planted = labels[0] if rng.random() < spec.informativeness else int(rng.integers(k))
            said = labels[0] if rng.random() < spec.informativeness else int(rng.integers(k))

            signal = prototypes[labels].mean(axis=0) * spec.raw_signal
            raw = signal + rng.normal(0.0, spec.raw_noise, size=(spec.frame_count, 2 * c)) * box
            enh = targets[planted] + rng.normal(0.0, spec.knowledge_noise, size=(spec.frame_count, 2 * c)) * box
            raw, enh = np.clip(raw, -box, box), np.clip(enh, -box, box)
            tensorio.save(out / "clips" / f"{sid}.clip", render_frames(raw, spec.height, spec.width))
            tensorio.save(out / "enhanced" / f"{sid}.clip", render_frames(enh, spec.height, spec.width))
            if spec.emit_masks:
                mask = np.zeros((spec.frame_count, spec.height, spec.width, c))
                r0, c0 = rng.integers(spec.height // 2), rng.integers(spec.width // 2)
                mask[:, r0:r0 + spec.height // 2, c0:c0 + spec.width // 2, :] = 1.0
                tensorio.save(out / "masks" / f"{sid}.mask", mask)
            captions[sid] = _caption(names[said])
            rows.append(json.dumps({"sample_id": sid, "labels": sorted(labels)}, sort_keys=True))
        (out / "splits" / f"{split}.jsonl").write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")

    task = {
        "label_names": names,
        "label_mode": spec.label_mode,
        "frame_count": spec.frame_count,
        "height": spec.height,
        "width": spec.width,
        "channels": c,
        "splits": dict(spec.splits),
        "knowledge_margin": margin,
        "spec": dataclasses.asdict(spec),
    }
    _dump(out / "task.json", task)
    _dump(out / "captions.json", captions)
    _dump(out / "explanations.json", {n: _explanation(n) for n in names})
    return out


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
