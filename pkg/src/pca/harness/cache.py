"""On-disk knowledge cache.

``index.jsonl`` holds one JSON object per sample (sample id, split, label
vector, route, text, relative tensor paths, config hash); each sample's
``f_v.pcak``, ``f_t.pcak`` and ``s.pcak`` live in a subdirectory named
after the sample.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import tensorio
from ..chat import RouteDecision
from ..errors import ConfigurationError, MissingAssetError

INDEX = "index.jsonl"


@dataclass
class KnowledgeBundle:
    sample_id: str
    f_v: np.ndarray
    s: np.ndarray
    text: str
    f_t: np.ndarray
    route: RouteDecision
    labels: list[int] | None = None
    split: str = ""


class KnowledgeCache:
    def __init__(self, root: Path, entries: list[dict]):
        self.root = root
        self.entries = entries
        self._by_id = {e["sample_id"]: e for e in entries}

    @classmethod
    def open(cls, root: str | Path, expected_hash: str | None = None) -> "KnowledgeCache":
        root = Path(root)
        index = root / INDEX
        if not index.is_file():
            raise MissingAssetError(f"knowledge cache index not found: {index}")
        entries = [json.loads(line) for line in index.read_text(encoding="utf-8").splitlines() if line]
        cache = cls(root, entries)
        if expected_hash is not None:
            stale = {e["config_hash"] for e in entries} - {expected_hash}
            if stale:
                raise ConfigurationError(
                    f"knowledge cache {root} was built with config hash {sorted(stale)[0]}, "
                    f"expected {expected_hash}; rebuild it")
        return cache

    @property
    def config_hash(self) -> str | None:
        return self.entries[0]["config_hash"] if self.entries else None

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._by_id

    def entry(self, sample_id: str) -> dict:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise MissingAssetError(f"sample {sample_id!r} is not in knowledge cache {self.root}") from None

    def read_visual(self, sample_id: str) -> tuple[np.ndarray, np.ndarray]:
        e = self.entry(sample_id)
        return tensorio.load(self.root / e["f_v"]), tensorio.load(self.root / e["s"])

    def read_text_features(self, sample_id: str) -> np.ndarray:
        return tensorio.load(self.root / self.entry(sample_id)["f_t"])

    def read_bundle(self, sample_id: str) -> KnowledgeBundle:
        e = self.entry(sample_id)
        f_v, s = self.read_visual(sample_id)
        return KnowledgeBundle(sample_id, f_v, s, e["text"], self.read_text_features(sample_id),
                               RouteDecision.from_dict(e["route"]), e.get("labels"), e.get("split", ""))


def bundle_record(bundle: KnowledgeBundle, config_hash: str) -> dict:
    sid = bundle.sample_id
    return {
        "sample_id": sid,
        "split": bundle.split,
        "labels": bundle.labels,
        "route": bundle.route.to_dict(),
        "text": bundle.text,
        "f_v": f"{sid}/f_v.pcak",
        "f_t": f"{sid}/f_t.pcak",
        "s": f"{sid}/s.pcak",
        "config_hash": config_hash,
    }


def write_bundle(root: Path, bundle: KnowledgeBundle, config_hash: str) -> dict:
    d = root / bundle.sample_id
    d.mkdir(parents=True, exist_ok=True)
    tensorio.save(d / "f_v.pcak", bundle.f_v)
    tensorio.save(d / "f_t.pcak", bundle.f_t)
    tensorio.save(d / "s.pcak", bundle.s)
    return bundle_record(bundle, config_hash)


def write_index(root: Path, records: list[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in records]
    (root / INDEX).write_text("\n".join(lines) + "\n", encoding="utf-8")
