"""Ablation sweeps over one config axis."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

from ..backbone import parameter_count
from ..errors import ConfigurationError
from .cache import INDEX, KnowledgeCache
from .config import PCAConfig
from .dataset import Dataset
from .pipeline import build_knowledge_cache
from .train import evaluate_tensors, load_split, run_training

log = logging.getLogger(__name__)

# axis name -> (train field, value parser)
AXES = {
    "variant": ("variant", str),
    "sigma": ("sigma", float),
    "block-num": ("block_num", int),
    "query-dim": ("prompt_dim", int),
    "knowledge": ("knowledge_mode", str),
}


def parse_values(axis: str, raw: str | Sequence) -> list:
    if axis not in AXES:
        raise ConfigurationError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    items = [v.strip() for v in raw.split(",") if v.strip()] if isinstance(raw, str) else list(raw)
    if not items:
        raise ConfigurationError("no ablation values given")
    try:
        return [AXES[axis][1](v) for v in items]
    except ValueError as e:
        raise ConfigurationError(f"bad value for axis {axis}: {e}") from None


def ensure_cache(cfg: PCAConfig, data: Dataset, root: Path) -> Path:
    label_mode = cfg.train.label_mode or data.label_mode
    path = root / cfg.cache_hash(label_mode)
    if not (path / INDEX).is_file():
        build_knowledge_cache(data.root, cfg, path)
    return path


def run_ablation(cfg: PCAConfig, axis: str, values: Sequence, data_dir: str | Path, out_dir: str | Path,
                 seeds: Sequence[int] | None = None, eval_split: str = "val") -> list[dict]:
    """Train and evaluate one model per (value, seed); return one row per value (seed-averaged)."""
    field_name, _ = AXES[axis]
    values = parse_values(axis, values)
    data = Dataset(data_dir)
    out = Path(out_dir)
    seeds = list(seeds) if seeds else [cfg.train.seed]
    rows = []
    for value in values:
        runs = []
        for seed in seeds:
            run_cfg = cfg.replace(train={field_name: value, "seed": seed})
            cache = ensure_cache(run_cfg, data, out / "caches")
            tag = f"{axis}={value}/seed={seed}"
            result = run_training(run_cfg, data.root, cache, out / "runs" / tag, eval_split=None)
            split = load_split(data, KnowledgeCache.open(cache), eval_split)
            report, _ = evaluate_tensors(result.model, split, run_cfg.train.knowledge_mode)
            runs.append((report, result.final_loss, result.model))
            log.info("%s: top1 %.4f", tag, report.top1)
        model = runs[0][2]
        n = len(runs)
        rows.append({
            "axis": axis,
            "value": value,
            "seeds": seeds,
            "top1": sum(r.top1 for r, _, _ in runs) / n,
            "top5": sum(r.top5 for r, _, _ in runs) / n,
            "micro_f1": sum(r.micro_f1 for r, _, _ in runs) / n,
            "map": sum(r.map for r, _, _ in runs) / n,
            "final_loss": sum(loss for _, loss, _ in runs) / n,
            "params": parameter_count(model.cfg, model.plan, model.dims, model.variant),
        })
    out.mkdir(parents=True, exist_ok=True)
    slug = axis.replace("-", "_")
    (out / f"ablation_{slug}.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / f"ablation_{slug}.md").write_text(format_table(rows), encoding="utf-8")
    return rows


def format_table(rows: list[dict]) -> str:
    head = "| {axis} | top-1 | top-5 | micro-F1 | mAP | final loss | params |".format(axis=rows[0]["axis"])
    lines = [head, "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['value']} | {r['top1']:.4f} | {r['top5']:.4f} | {r['micro_f1']:.4f} | "
                     f"{r['map']:.4f} | {r['final_loss']:.4f} | {r['params']} |")
    return "\n".join(lines) + "\n"
