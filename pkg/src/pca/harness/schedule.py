"""Linear-warmup cosine learning-rate schedule."""
from __future__ import annotations

import math

from ..errors import ConfigurationError


def lr_at_step(step: int, steps_per_epoch: int, cfg) -> float:
    """Learning rate for optimizer step ``step`` (0-based) under ``cfg`` (a TrainConfig).

    Rises linearly from 0 to ``base_lr`` over the warmup steps, then follows a
    half cosine to 0 at ``total_epochs * steps_per_epoch``; 0 beyond that.
    """
    if steps_per_epoch <= 0:
        raise ConfigurationError("steps_per_epoch must be positive")
    if step < 0:
        raise ConfigurationError("step must be >= 0")
    base_lr = cfg.base_lr
    warmup = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if total <= warmup:
        raise ConfigurationError("warmup must end before training does")
    if step < warmup:
        return base_lr * step / warmup
    t = min((step - warmup) / (total - warmup), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))
