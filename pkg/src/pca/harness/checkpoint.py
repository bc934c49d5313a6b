"""Checkpoint files.

Layout: magic ``PCAC``, u32 version, u32 header length, UTF-8 JSON header
(config, config hash, step, epoch, model shape, parameter names), then one
PCAK tensor per parameter in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import torch

from .. import tensorio
from ..backbone import PCAModel, build_model
from ..errors import InvalidInputError, MissingAssetError
from .config import PCAConfig

MAGIC = b"PCAC"
VERSION = 1


def encode_checkpoint(model: PCAModel, cfg: PCAConfig, epoch: int, extra: dict | None = None) -> bytes:
    state = model.state_dict()
    header = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "step": model.step,
        "epoch": epoch,
        "model": {
            "class_count": model.cfg.class_count,
            "input_dim": model.cfg.input_dim,
            "label_mode": model.cfg.label_mode,
            "variant": model.variant,
            "seed": model.seed,
        },
        "params": list(state),
        **(extra or {}),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(tensorio.encode(t.detach().cpu().numpy()) for t in state.values())
    return MAGIC + struct.pack("<II", VERSION, len(head)) + head + body


def save_checkpoint(path: str | Path, model: PCAModel, cfg: PCAConfig, epoch: int,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model, cfg, epoch, extra))
    return path


def read_header(path: str | Path) -> tuple[dict, bytes, int]:
    p = Path(path)
    if not p.is_file():
        raise MissingAssetError(f"checkpoint not found: {p}")
    buf = p.read_bytes()
    if buf[:4] != MAGIC:
        raise InvalidInputError(f"{p} is not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    return json.loads(buf[12:12 + n].decode("utf-8")), buf, 12 + n


def load_checkpoint(path: str | Path) -> tuple[PCAModel, PCAConfig, dict]:
    header, buf, pos = read_header(path)
    cfg = PCAConfig.from_dict(header["config"])
    m = header["model"]
    model = build_model(cfg.backbone_config(m["class_count"], m["input_dim"], m["label_mode"]),
                        cfg.insertion_plan(), cfg.adapter_dims(), m["seed"], m["variant"])
    state = {}
    for name in header["params"]:
        array, pos = tensorio.decode(buf, pos)
        state[name] = torch.from_numpy(array)
    model.load_state_dict(state, strict=True)
    model.step = header["step"]
    return model, cfg, header
