"""Checkpoint evaluation with selectable knowledge modalities."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import tensorio
from .cache import KnowledgeCache
from .checkpoint import load_checkpoint
from .dataset import Dataset
from .metrics import EvalReport
from .train import evaluate_tensors, load_split


def evaluate_model(checkpoint: str | Path, split: str, cache_dir: str | Path | None = None,
                   knowledge_mode: str = "both", data_dir: str | Path | None = None,
                   scores_out: str | Path | None = None) -> EvalReport:
    """Eval-mode metrics on one split.

    ``data_dir`` and ``cache_dir`` default to the paths recorded in the
    checkpoint. ``scores_out`` dumps the score matrix as a PCAK tensor.
    """
    model, cfg, header = load_checkpoint(checkpoint)
    data = Dataset(data_dir or header["data_dir"])
    cache = KnowledgeCache.open(cache_dir or header["cache_dir"],
                                expected_hash=cfg.cache_hash(model.cfg.label_mode))
    tensors = load_split(data, cache, split)
    report, scores = evaluate_tensors(model, tensors, knowledge_mode)
    if scores_out is not None:
        tensorio.save(scores_out, scores.astype(np.float32))
    return report
