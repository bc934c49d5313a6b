import hashlib
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

from pca.harness.config import PCAConfig  # noqa: E402
from pca.harness.pipeline import build_knowledge_cache  # noqa: E402
from pca.harness.synth import SyntheticTaskSpec, generate_synthetic  # noqa: E402

TINY_SPEC = dict(class_count=4, splits={"train": 48, "val": 16, "empty": 0}, frame_count=4, height=4, width=4,
                 feature_dim=8)

TINY_CONFIG = {
    "train": {"total_epochs": 3, "warmup_epochs": 1, "batch_size": 16, "prompt_dim": 16, "n_prompts": 4,
              "adapter_heads": 2, "block_num": 2},
    "backbone": {"depth": 2, "d_model": 16, "n_heads": 2},
    "knowledge": {"extractor": {"kind": "mock", "seed": 0, "feature_dim": 8},
                  "text_encoder": {"kind": "mock", "seed": 0, "dim": 8}},
}


def tree_digest(root: Path) -> dict[str, str]:
    """Relative path -> sha256 of every file under ``root``."""
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="session")
def tiny_config() -> PCAConfig:
    return PCAConfig.from_dict(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory) -> Path:
    return generate_synthetic(SyntheticTaskSpec(**TINY_SPEC), tmp_path_factory.mktemp("tiny") / "data")


@pytest.fixture(scope="session")
def tiny_cache(tiny_data, tiny_config, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("tiny_cache") / "cache"
    build_knowledge_cache(tiny_data, tiny_config, out)
    return out
