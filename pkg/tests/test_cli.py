import json

import pytest

from pca.harness.cli import main

from conftest import TINY_CONFIG, TINY_SPEC


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(TINY_SPEC))
    cfg = json.loads(json.dumps(TINY_CONFIG))
    cfg["train"]["total_epochs"] = 2
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def run(capsys, *args):
    code = main([str(a) for a in args])
    return code, capsys.readouterr()


def test_end_to_end(workspace, capsys):
    w = workspace
    assert run(capsys, "gen-synth", "--spec", w / "spec.json", "--out", w / "data")[0] == 0
    code, out = run(capsys, "build-cache", "--data", w / "data", "--config", w / "config.json", "--out", w / "cache")
    assert code == 0 and "cached 64 samples" in out.out
    code, out = run(capsys, "train", "--config", w / "config.json", "--data", w / "data", "--cache", w / "cache",
                    "--out", w / "run")
    assert code == 0 and json.loads(out.out)["checkpoint"].endswith("model.pcac")
    code, out = run(capsys, "eval", "--checkpoint", w / "run" / "model.pcac", "--split", "val",
                    "--knowledge", "visual")
    assert code == 0 and set(json.loads(out.out)) >= {"micro_f1", "top1", "top5", "map"}


def test_eval_empty_split_exit_code(workspace, capsys):
    code, out = run(capsys, "eval", "--checkpoint", workspace / "run" / "model.pcac", "--split", "empty")
    assert code == 2 and "empty" in out.err


def test_missing_checkpoint_exit_code(tmp_path, capsys):
    assert run(capsys, "eval", "--checkpoint", tmp_path / "none.pcac", "--split", "val")[0] == 3


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"train": {"sigma": 3}}')
    code, out = run(capsys, "build-cache", "--data", tmp_path, "--config", tmp_path / "c.json", "--out", tmp_path / "o")
    assert code == 2 and "sigma" in out.err


def test_usage_error_exit_code(capsys):
    assert run(capsys, "ablate", "--axis", "depth", "--values", "1", "--data", ".", "--out", ".")[0] == 2


def test_gradcheck_command(capsys):
    code, out = run(capsys, "gradcheck")
    assert code == 0 and out.out.count("PASS") == 5
