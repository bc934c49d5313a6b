import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis.extra.numpy import array_shapes, arrays
from hypothesis import strategies as st

from pca import tensorio
from pca.chat import PROMPT_PATH
from pca.errors import ConfigurationError, InvalidInputError, MissingAssetError
from pca.harness.cache import KnowledgeCache
from pca.harness.checkpoint import encode_checkpoint, load_checkpoint, read_header, save_checkpoint
from pca.harness.config import PCAConfig
from pca.harness.dataset import Dataset
from pca.harness.pipeline import build_knowledge_cache, knowledge_for_sample, resolve_providers
from pca.harness.train import make_model

from conftest import tree_digest


class TestTensorIO:
    def test_layout(self):
        buf = tensorio.encode(np.array([[1.0, 2.0, 3.0]]))
        assert buf[:4] == b"PCAK"
        assert buf[4:8] == (1).to_bytes(4, "little") and buf[8] == 2
        assert buf[9:17] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert np.frombuffer(buf[17:], "<f4").tolist() == [1.0, 2.0, 3.0]

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip(self, a):
        out, end = tensorio.decode(tensorio.encode(a))
        assert out.shape == a.shape and np.array_equal(out, a)

    def test_concatenated(self):
        buf = tensorio.encode(np.ones(2)) + tensorio.encode(np.zeros((1, 3)))
        a, pos = tensorio.decode(buf)
        b, end = tensorio.decode(buf, pos)
        assert a.tolist() == [1, 1] and b.shape == (1, 3) and end == len(buf)

    def test_errors(self, tmp_path):
        with pytest.raises(InvalidInputError):
            tensorio.decode(b"NOPE" + bytes(10))
        with pytest.raises(InvalidInputError):
            tensorio.decode(tensorio.encode(np.ones(4))[:-2])
        with pytest.raises(MissingAssetError):
            tensorio.load(tmp_path / "absent.pcak")


class TestCache:
    def test_rebuild_is_byte_identical(self, tiny_data, tiny_config, tmp_path):
        a = build_knowledge_cache(tiny_data, tiny_config, tmp_path / "a")
        b = build_knowledge_cache(tiny_data, tiny_config, tmp_path / "b")
        assert tree_digest(a.root) == tree_digest(b.root)
        build_knowledge_cache(tiny_data, tiny_config, tmp_path / "a", workers=3)
        assert tree_digest(a.root) == tree_digest(b.root)

    def test_read_back_equals_memory(self, tiny_data, tiny_config, tiny_cache):
        data = Dataset(tiny_data)
        providers = resolve_providers(tiny_config, data)
        cache = KnowledgeCache.open(tiny_cache)
        for sid in ("train_00000", "val_00003"):
            mem = knowledge_for_sample(data, sid, tiny_config, providers, "single")
            disk = cache.read_bundle(sid)
            assert disk.text == mem.text and disk.route == mem.route
            for name in ("f_v", "s", "f_t"):
                assert np.array_equal(getattr(disk, name), getattr(mem, name).astype(np.float32))

    def test_routes_follow_threshold(self, tiny_cache, tiny_config):
        for e in KnowledgeCache.open(tiny_cache).entries:
            s = tensorio.load(tiny_cache / e["s"])
            assert (e["route"]["path"] == PROMPT_PATH) == (float(s.max()) >= tiny_config.train.sigma)

    def test_stale_hash_refused(self, tiny_data, tiny_config, tiny_cache, tmp_path):
        other = tiny_config.replace(train={"sigma": 0.9})
        with pytest.raises(ConfigurationError):
            KnowledgeCache.open(tiny_cache, expected_hash=other.cache_hash("single"))
        with pytest.raises(ConfigurationError):
            build_knowledge_cache(tiny_data, other, tiny_cache)

    def test_missing_sample(self, tiny_cache):
        with pytest.raises(MissingAssetError):
            KnowledgeCache.open(tiny_cache).entry("nobody")

    def test_missing_enhanced_clip_names_sample(self, tiny_data, tiny_config, tmp_path):
        import shutil
        data = tmp_path / "data"
        shutil.copytree(tiny_data, data)
        (data / "enhanced" / "val_00002.clip").unlink()
        with pytest.raises(MissingAssetError, match="val_00002"):
            build_knowledge_cache(data, tiny_config, tmp_path / "c")


class TestCheckpoint:
    def test_round_trip(self, tiny_data, tiny_config, tmp_path):
        model = make_model(tiny_config, Dataset(tiny_data))
        model.step = 17
        path = save_checkpoint(tmp_path / "m.pcac", model, tiny_config, 2, {"note": "x"})
        loaded, cfg, header = load_checkpoint(path)
        assert cfg == tiny_config and header["epoch"] == 2 and header["note"] == "x" and loaded.step == 17
        for (n, a), (m, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
            assert n == m and torch.equal(a, b)
        assert encode_checkpoint(loaded, cfg, 2, {"note": "x"}) == path.read_bytes()

    def test_header_layout(self, tiny_data, tiny_config, tmp_path):
        model = make_model(tiny_config, Dataset(tiny_data))
        path = save_checkpoint(tmp_path / "m.pcac", model, tiny_config, 0)
        raw = path.read_bytes()
        assert raw[:4] == b"PCAC"
        header, _, _ = read_header(path)
        assert header["params"] == list(model.state_dict())
        assert json.dumps(header["config"], sort_keys=True) == json.dumps(tiny_config.to_dict(), sort_keys=True)

    def test_bad_files(self, tmp_path):
        with pytest.raises(MissingAssetError):
            load_checkpoint(tmp_path / "none.pcac")
        (tmp_path / "bad.pcac").write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(InvalidInputError):
            load_checkpoint(tmp_path / "bad.pcac")


class TestConfig:
    def test_round_trip(self, tiny_config, tmp_path):
        tiny_config.save(tmp_path / "c.json")
        assert PCAConfig.load(tmp_path / "c.json") == tiny_config

    def test_unknown_keys(self):
        with pytest.raises(ConfigurationError):
            PCAConfig.from_dict({"train": {"learning_rate": 1.0}})
        with pytest.raises(ConfigurationError):
            PCAConfig.from_dict({"optim": {}})

    @pytest.mark.parametrize("train", [{"sigma": 1.5}, {"variant": "concat"}, {"warmup_epochs": 20}])
    def test_invalid_values(self, train):
        with pytest.raises(ConfigurationError):
            PCAConfig.from_dict({"train": train})

    def test_cache_hash_ignores_training_only_fields(self, tiny_config):
        assert tiny_config.cache_hash("single") == tiny_config.replace(train={"base_lr": 0.5}).cache_hash("single")
        assert tiny_config.cache_hash("single") != tiny_config.replace(train={"sigma": 0.6}).cache_hash("single")
