import json
import os

import numpy as np
import pytest

from ddp.checkpoint import (
    CheckpointError,
    atomic_write,
    dumps_model,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from ddp.config import DEFAULTS, ConfigError, load_config
from ddp.inference import log_likelihood
from oracles import KINDS, random_model, random_sequence


@pytest.mark.parametrize("kind", KINDS)
def test_round_trip_is_bit_identical(kind, tmp_path):
    model = random_model(kind, 4, 2, 3)
    path = tmp_path / "m.json"
    save_model(path, model)
    back = load_model(path)
    assert back.kind == kind and back.catalog == model.catalog
    for name, arr in model.arrays().items():
        assert back.arrays()[name].tobytes() == arr.tobytes()
    seq = random_sequence(3, 4, 2, 6)
    assert log_likelihood(back, seq) == log_likelihood(model, seq)
    assert dumps_model(back) == path.read_text()


def test_hash_mismatch_is_detected():
    payload = model_to_dict(random_model("hawkes", 2, 0, 0))
    payload["params"]["bias"]["data"][0] += 1e-9
    with pytest.raises(CheckpointError, match="hash"):
        model_from_dict(payload)


def test_unknown_version_is_rejected():
    payload = model_to_dict(random_model("hawkes", 2, 0, 0))
    payload["format_version"] = 99
    with pytest.raises(CheckpointError, match="format_version"):
        model_from_dict(payload)


def test_not_json_is_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(CheckpointError):
        load_model(p)


def test_created_stamp(monkeypatch):
    model = random_model("poisson", 2, 0, 0)
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    assert model_to_dict(model)["created"] is None
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert model_to_dict(model)["created"] == "1970-01-01T00:00:00Z"


def test_atomic_write_leaves_no_temp_on_failure(tmp_path):
    target = tmp_path / "out.txt"
    atomic_write(target, "first\n")
    with pytest.raises(TypeError):
        atomic_write(target, 123)
    assert target.read_text() == "first\n"
    assert os.listdir(tmp_path) == ["out.txt"]


def test_defaults_without_file():
    cfg = load_config()
    assert cfg.seed == 0 and cfg.train["eta"] == 1.0 and cfg.model["kind"] == "ddp"
    assert cfg.echo() == DEFAULTS


def test_yaml_merges_over_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 7\ntrain:\n  epochs: 3\n  learning_rate: 0.01\nmodel: {kind: hawkes}\n")
    cfg = load_config(p)
    assert cfg.seed == 7 and cfg.train["epochs"] == 3 and cfg.train["eta"] == 1.0
    assert cfg.model == {"kind": "hawkes", "D": 16, "H": 32}


def test_overrides_win_and_none_is_ignored(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 7\n")
    cfg = load_config(p, {"seed": 9, "out": None})
    assert cfg.seed == 9 and cfg.out == "out"


@pytest.mark.parametrize("text", ["bogus: 1\n", "train:\n  lr: 1\n", "train: 3\n", "- 1\n", "a: [\n"])
def test_bad_config_is_rejected(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("DDP_THREADS", "3")
    assert load_config().threads == 3
    assert load_config(overrides={"threads": 2}).threads == 2
    monkeypatch.setenv("DDP_THREADS", "many")
    with pytest.raises(ConfigError):
        load_config()


def test_config_echo_is_json_serialisable(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("analytics: {grid: [0, 1, 2]}\n")
    echo = load_config(p).echo()
    assert json.loads(json.dumps(echo))["analytics"]["grid"] == [0, 1, 2]
    assert np.isclose(echo["train"]["validation_fraction"], 0.2)
