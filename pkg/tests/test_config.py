import json

import pytest

from cycflow.config import RESOLVED_NAME, load_run_config, parse_override, write_resolved
from cycflow.errors import ConfigError, StorageError
from cycflow.model import ModelConfig
from cycflow.train import TrainConfig


def _write(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


def test_defaults_without_a_file():
    run = load_run_config()
    assert run.train == TrainConfig()
    assert run.model == ModelConfig()
    assert run.source is None


def test_file_then_overrides(tmp_path):
    path = _write(tmp_path, "[train]\nbatch = 2\nlengths = [5, 9]\n\n[model]\nd_hidden = 32\n")
    run = load_run_config(path, ["train.batch=3"])
    assert run.train.batch == 3
    assert run.train.lengths == (5, 9)
    assert run.model.d_hidden == 32
    assert run.source == str(path)


def test_override_values_are_toml_literals():
    assert parse_override("train.lr_tokens=1e-3") == ("train", "lr_tokens", 1e-3)
    assert parse_override("data.lengths=[5, 9]") == ("data", "lengths", [5, 9])
    assert parse_override("eval.cycle=false") == ("eval", "cycle", False)
    assert parse_override("sample.caption=accelerate,disc") == ("sample", "caption", "accelerate,disc")


@pytest.mark.parametrize("text", ["train.batch", "batch=3", "optim.lr=1"])
def test_malformed_overrides(text):
    with pytest.raises(ConfigError):
        parse_override(text)


def test_unknown_keys_and_sections(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        load_run_config(overrides=["train.momentum=0.9"])
    with pytest.raises(ConfigError, match="model"):
        load_run_config(overrides=["model.width=3"])
    with pytest.raises(ConfigError, match="unknown sections"):
        load_run_config(_write(tmp_path, "[optim]\nlr = 1\n"))


def test_bad_values_and_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(overrides=["train.mode='sideways'"])
    with pytest.raises(ConfigError, match="cannot parse"):
        load_run_config(_write(tmp_path, "[train\n"))
    with pytest.raises(StorageError):
        load_run_config(tmp_path / "absent.toml")


def test_hash_tracks_values_not_source(tmp_path):
    a = load_run_config()
    b = load_run_config(_write(tmp_path, "[train]\nbatch = 4\n"))
    assert a == b
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 64
    assert a.with_section("train", batch=5).config_hash() != a.config_hash()


def test_resolved_record(tmp_path):
    run = load_run_config(overrides=["eval.steps=8"])
    path = write_resolved(run, tmp_path, {"command": "eval"})
    assert path.name == RESOLVED_NAME
    payload = json.loads(path.read_text())
    assert payload["eval"]["steps"] == 8
    assert payload["run"] == {"command": "eval"}
    assert payload["data"]["lengths"] == [9, 17]
