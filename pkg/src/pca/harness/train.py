"""Training loop: AdamW with warmup + cosine schedule over cached knowledge."""
from __future__ import annotations

import json
import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..backbone import ABSENT, Knowledge, PCAModel, build_model, loss as loss_fn, stream_seed
from ..errors import ConfigurationError, InvalidInputError, NumericalError
from .cache import KnowledgeCache
from .checkpoint import save_checkpoint
from .config import PCAConfig
from .dataset import Dataset
from .metrics import EvalReport, evaluation_report
from .schedule import lr_at_step

log = logging.getLogger(__name__)


@dataclass
class SplitTensors:
    ids: list[str]
    tokens: torch.Tensor  # (N, T, 2C)
    f_v: torch.Tensor  # (N, T, dv)
    f_t: torch.Tensor  # (N, L, dt), zero-padded
    t_mask: torch.Tensor  # (N, L) bool
    targets: torch.Tensor  # (N, K)

    def __len__(self) -> int:
        return len(self.ids)

    def knowledge(self, idx, mode: str = "both") -> Knowledge:
        if mode == "none":
            return ABSENT
        if mode not in ("visual", "textual", "both"):
            raise ConfigurationError(f"unknown knowledge mode {mode!r}")
        f_v = self.f_v[idx] if mode in ("visual", "both") else None
        if mode in ("textual", "both"):
            return Knowledge(f_v, self.f_t[idx], self.t_mask[idx])
        return Knowledge(f_v)


def load_split(data: Dataset, cache: KnowledgeCache, split: str) -> SplitTensors:
    samples = data.split(split)
    if not samples:
        raise InvalidInputError(f"split {split!r} is empty")
    f_v, f_t = [], []
    for s in samples:
        fv, _ = cache.read_visual(s.sample_id)
        f_v.append(fv)
        f_t.append(cache.read_text_features(s.sample_id))
    length = max(t.shape[0] for t in f_t)
    padded = np.zeros((len(f_t), length, f_t[0].shape[1]), dtype=np.float32)
    mask = np.zeros((len(f_t), length), dtype=bool)
    for i, t in enumerate(f_t):
        padded[i, : t.shape[0]] = t
        mask[i, : t.shape[0]] = True
    return SplitTensors(
        [s.sample_id for s in samples],
        torch.from_numpy(data.clip_tokens(samples)),
        torch.from_numpy(np.stack(f_v)),
        torch.from_numpy(padded),
        torch.from_numpy(mask),
        torch.from_numpy(data.targets(samples)),
    )


def predict_scores(model: PCAModel, tensors: SplitTensors, knowledge_mode: str = "both",
                   batch_size: int = 256) -> np.ndarray:
    """Eval-mode class scores (softmax or logistic) for every sample of a split."""
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            idx = slice(start, start + batch_size)
            logits = model(tensors.tokens[idx], tensors.knowledge(idx, knowledge_mode), "eval")
            probs = logits.softmax(-1) if model.cfg.label_mode == "single" else logits.sigmoid()
            out.append(probs.double().numpy())
    return np.concatenate(out)


def evaluate_tensors(model: PCAModel, tensors: SplitTensors, knowledge_mode: str = "both") -> tuple[EvalReport, np.ndarray]:
    scores = predict_scores(model, tensors, knowledge_mode)
    return evaluation_report(scores, tensors.targets.numpy(), model.cfg.label_mode), scores


@dataclass
class TrainResult:
    model: PCAModel
    checkpoint: Path
    log_path: Path
    final_loss: float
    history: list[dict] = field(default_factory=list)


def make_model(cfg: PCAConfig, data: Dataset) -> PCAModel:
    label_mode = cfg.train.label_mode or data.label_mode
    bcfg = cfg.backbone_config(data.class_count, data.stat_dim, label_mode)
    return build_model(bcfg, cfg.insertion_plan(), cfg.adapter_dims(), cfg.train.seed, cfg.train.variant)


def make_optimizer(params, cfg: PCAConfig) -> torch.optim.AdamW:
    t = cfg.train
    return torch.optim.AdamW(params, lr=0.0, betas=(t.beta1, t.beta2), eps=t.adam_eps,
                             weight_decay=t.weight_decay)


def run_training(cfg: PCAConfig, data_dir: str | Path, cache_dir: str | Path, out_dir: str | Path,
                 eval_split: str | None = "val") -> TrainResult:
    """Train one model; checkpoint every epoch and log every step.

    ``out_dir`` receives ``train_log.jsonl``, ``checkpoints/epoch_NNN.pcac``
    and ``model.pcac`` (the final checkpoint).
    """
    t = cfg.train
    data = Dataset(data_dir)
    label_mode = t.label_mode or data.label_mode
    cache = KnowledgeCache.open(cache_dir, expected_hash=cfg.cache_hash(label_mode))
    train = load_split(data, cache, "train")
    val = load_split(data, cache, eval_split) if eval_split and eval_split in data.split_names else None

    model = make_model(cfg, data)
    if t.freeze_backbone:
        for p in model.backbone_parameters():
            p.requires_grad_(False)
    opt = make_optimizer([p for p in model.parameters() if p.requires_grad], cfg)
    dropout_gen = torch.Generator().manual_seed(stream_seed(t.seed, "dropout"))

    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    steps_per_epoch = math.ceil(len(train) / t.batch_size)
    history: list[dict] = []
    ckpt_meta = {"data_dir": str(Path(data_dir).resolve()), "cache_dir": str(Path(cache_dir).resolve())}

    with log_path.open("w", encoding="utf-8") as fh:
        def emit(rec: dict) -> None:
            history.append(rec)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

        epoch_loss = float("nan")
        for epoch in range(t.total_epochs):
            model.train()
            order = np.random.default_rng([t.seed, epoch]).permutation(len(train))
            total, count = 0.0, 0
            for b in range(steps_per_epoch):
                idx = torch.from_numpy(order[b * t.batch_size:(b + 1) * t.batch_size])
                lr = lr_at_step(model.step, steps_per_epoch, t)
                for group in opt.param_groups:
                    group["lr"] = lr
                logits = model(train.tokens[idx], train.knowledge(idx, t.knowledge_mode), "train", dropout_gen)
                loss = loss_fn(logits, train.targets[idx], model.cfg.label_mode)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"non-finite loss at step {model.step}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                emit({"kind": "step", "epoch": epoch, "step": model.step, "loss": value, "lr": lr})
                model.step += 1
                total += value * len(idx)
                count += len(idx)
            epoch_loss = total / count
            rec = {"kind": "epoch", "epoch": epoch, "step": model.step, "loss": epoch_loss,
                   "lr": lr_at_step(model.step, steps_per_epoch, t)}
            if val is not None:
                report, _ = evaluate_tensors(model, val, t.knowledge_mode)
                rec["metrics"] = {k: v for k, v in report.to_dict().items() if k != "per_class_ap"}
            emit(rec)
            ckpt = save_checkpoint(out / "checkpoints" / f"epoch_{epoch:03d}.pcac", model, cfg, epoch, ckpt_meta)
            log.info("epoch %d loss %.4f %s", epoch, epoch_loss, rec.get("metrics", ""))

    final = out / "model.pcac"
    shutil.copyfile(ckpt, final)
    return TrainResult(model, final, log_path, epoch_loss, history)
