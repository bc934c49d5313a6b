"""Recognition metrics: micro-F1, top-k accuracy, mean average precision.

Conventions:
  * micro-F1 binarises with ``score >= threshold`` and pools counts over all
    cells; with no positives predicted or present it is 1.
  * top-k and AP rankings break ties by lower index (stable sort).
  * classes without positives are left out of the mAP mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, InvalidInputError, ShapeError, UndefinedMetricError


def _as_2d(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a (samples, classes) matrix")
    return a


def micro_f1(scores, targets, bin_threshold: float = 0.5) -> float:
    scores, targets = _as_2d(scores, "scores"), _as_2d(targets, "targets")
    if scores.shape != targets.shape:
        raise ShapeError(f"scores {scores.shape} vs targets {targets.shape}")
    pred = scores >= bin_threshold
    truth = targets > 0.5
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp == fp == fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def top_k_accuracy(scores, targets, k: int) -> float:
    """Fraction of samples whose true class (index) is among the ``k`` best scores."""
    scores = _as_2d(scores, "scores")
    targets = np.asarray(targets).reshape(-1)
    if targets.shape[0] != scores.shape[0]:
        raise ShapeError(f"{targets.shape[0]} targets for {scores.shape[0]} samples")
    if not 1 <= k <= scores.shape[1]:
        raise ConfigurationError(f"k={k} outside [1, {scores.shape[1]}]")
    if scores.shape[0] == 0:
        raise InvalidInputError("no samples")
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == targets[:, None], axis=1)))


def average_precision(scores, labels) -> float:
    """AP for one class; NaN when the class has no positives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0.5
    npos = int(labels.sum())
    if npos == 0:
        return float("nan")
    ranked = labels[np.argsort(-scores, kind="stable")]
    hits = np.cumsum(ranked)
    precision = hits / np.arange(1, ranked.size + 1)
    return float(precision[ranked].sum() / npos)


def per_class_ap(scores, targets) -> np.ndarray:
    scores, targets = _as_2d(scores, "scores"), _as_2d(targets, "targets")
    if scores.shape != targets.shape:
        raise ShapeError(f"scores {scores.shape} vs targets {targets.shape}")
    return np.array([average_precision(scores[:, c], targets[:, c]) for c in range(scores.shape[1])])


def mean_average_precision(scores, targets) -> tuple[float, np.ndarray]:
    """Return ``(mAP, per-class AP)``; classes without positives carry NaN."""
    ap = per_class_ap(scores, targets)
    valid = ~np.isnan(ap)
    if not valid.any():
        raise UndefinedMetricError("mAP undefined: no class has a positive sample")
    return float(ap[valid].mean()), ap


@dataclass
class EvalReport:
    micro_f1: float
    top1: float
    top5: float
    map: float
    per_class_ap: list[float | None]
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {"micro_f1": self.micro_f1, "top1": self.top1, "top5": self.top5, "map": self.map,
                "per_class_ap": self.per_class_ap, "n_samples": self.n_samples}


def _topk_multi(scores: np.ndarray, targets: np.ndarray, k: int) -> float:
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hit = np.take_along_axis(targets > 0.5, top, axis=1).any(axis=1)
    return float(hit.mean())


def evaluation_report(scores, targets, label_mode: str = "single", bin_threshold: float = 0.5) -> EvalReport:
    """All four metrics for a ``(samples, classes)`` score matrix and 0/1 targets.

    Multi-label top-k counts a hit when any positive class is in the top k.
    Top-5 falls back to top-C when there are fewer than five classes.
    """
    scores, targets = _as_2d(scores, "scores"), _as_2d(targets, "targets")
    if scores.shape[0] == 0:
        raise InvalidInputError("cannot evaluate an empty split")
    k5 = min(5, scores.shape[1])
    if label_mode == "single":
        idx = targets.argmax(axis=1)
        top1, top5 = top_k_accuracy(scores, idx, 1), top_k_accuracy(scores, idx, k5)
    else:
        top1, top5 = _topk_multi(scores, targets, 1), _topk_multi(scores, targets, k5)
    m, ap = mean_average_precision(scores, targets)
    return EvalReport(micro_f1(scores, targets, bin_threshold), top1, top5, m,
                      [None if np.isnan(a) else float(a) for a in ap], scores.shape[0])
