"""Dataset directory layout.

::

    task.json               class names, label mode, clip geometry, split sizes
    splits/<split>.jsonl    {"sample_id": ..., "labels": [class indices]}
    clips/<id>.clip         raw clip (PCAK, T x H x W x C)
    enhanced/<id>.clip      pre-enhanced clip for the external enhancer
    masks/<id>.mask         segmentation-mask video for mask fusion
    captions.json           sample_id -> caption
    explanations.json       label name -> explanation
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError, MissingAssetError
from ..percept import VideoClip, load_clip, pixel_statistics


@dataclass
class Sample:
    sample_id: str
    labels: list[int]


class Dataset:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        task = self.root / "task.json"
        if not task.is_file():
            raise MissingAssetError(f"not a dataset directory (no task.json): {self.root}")
        self.task = json.loads(task.read_text(encoding="utf-8"))

    @property
    def label_names(self) -> list[str]:
        return list(self.task["label_names"])

    @property
    def class_count(self) -> int:
        return len(self.task["label_names"])

    @property
    def label_mode(self) -> str:
        return self.task.get("label_mode", "single")

    @property
    def frame_count(self) -> int:
        return int(self.task.get("frame_count", 8))

    @property
    def channels(self) -> int:
        return int(self.task["channels"])

    @property
    def stat_dim(self) -> int:
        return 2 * self.channels

    @cached_property
    def split_names(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "splits").glob("*.jsonl"))

    def split(self, name: str) -> list[Sample]:
        path = self.root / "splits" / f"{name}.jsonl"
        if not path.is_file():
            raise MissingAssetError(f"split {name!r} not found in {self.root}")
        rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]
        return [Sample(r["sample_id"], list(r["labels"])) for r in rows]

    def all_samples(self) -> list[tuple[str, Sample]]:
        return [(name, s) for name in self.split_names for s in self.split(name)]

    def clip(self, sample_id: str) -> VideoClip:
        return load_clip(self.root / "clips" / f"{sample_id}.clip", sample_id, self.frame_count)

    def label_vector(self, labels: list[int]) -> list[int]:
        v = [0] * self.class_count
        for i in labels:
            if not 0 <= i < self.class_count:
                raise InvalidInputError(f"label index {i} out of range")
            v[i] = 1
        return v

    def clip_tokens(self, samples: list[Sample]) -> np.ndarray:
        """Backbone input: per-frame pixel statistics of the raw clips, ``(N, T, 2C)``."""
        return np.stack([pixel_statistics(self.clip(s.sample_id).frames) for s in samples]).astype(np.float32)

    def targets(self, samples: list[Sample]) -> np.ndarray:
        return np.array([self.label_vector(s.labels) for s in samples], dtype=np.float32)
