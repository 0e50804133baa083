import json

import pytest

from gazefatigue import config as cfgmod
from gazefatigue.config import apply_override, config_hash, load_config


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv(cfgmod.CACHE_ENV, raising=False)
    monkeypatch.delenv(cfgmod.RESULTS_ENV, raising=False)


def test_defaults_are_valid():
    cfg = load_config()
    assert cfg["train"]["epochs"] == 200 and cfg["train"]["batch_size"] == 64
    assert cfg["grid"]["windows"] == [5, 10, 15, 20]
    assert len(cfg["grid"]["tasks"]) == 5 and len(cfg["grid"]["models"]) == 6


def test_toml_file_then_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[train]\nepochs = 7\nlearning_rate = 0.01\n[grid]\ntasks = ["PUR"]\n')
    cfg = load_config(path, ["train.epochs=9", "grid.models=['FCN', 'TCN']", "data.data_dir=/x/y"])
    assert cfg["train"]["epochs"] == 9
    assert cfg["train"]["learning_rate"] == 0.01
    assert cfg["grid"]["tasks"] == ["PUR"] and cfg["grid"]["models"] == ["FCN", "TCN"]
    assert cfg["data"]["data_dir"] == "/x/y"
    assert cfg["train"]["batch_size"] == 64   # untouched default survives the merge


def test_json_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"stats": {"equal_var": True}}))
    assert load_config(path)["stats"]["equal_var"] is True


def test_env_vars_win(monkeypatch, tmp_path):
    monkeypatch.setenv(cfgmod.CACHE_ENV, str(tmp_path / "c"))
    monkeypatch.setenv(cfgmod.RESULTS_ENV, str(tmp_path / "r"))
    cfg = load_config(None, ["data.results_dir=elsewhere"])
    assert cfg["data"]["cache_dir"] == str(tmp_path / "c")
    assert cfg["data"]["results_dir"] == str(tmp_path / "r")


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        load_config(None, ["grid.windows=[7]"])
    with pytest.raises(ValueError):
        load_config(None, ["grid.tasks=['XYZ']"])
    with pytest.raises(ValueError):
        load_config(None, ["train.epochs=0"])
    with pytest.raises(ValueError):
        load_config(None, ["no_equals_sign"])
    with pytest.raises(TypeError):
        load_config(None, ["train.unknown_knob=1"])


def test_override_parsing():
    cfg = {}
    apply_override(cfg, "a.b", "3")
    apply_override(cfg, "a.c", "true")
    apply_override(cfg, "a.d", "hello world")
    assert cfg == {"a": {"b": 3, "c": True, "d": "hello world"}}


def test_hash_stable_and_sensitive():
    base = load_config()
    assert config_hash(base) == config_hash(load_config())
    assert len(config_hash(base)) == 16
    assert config_hash(load_config(None, ["train.epochs=3"])) != config_hash(base)
    assert config_hash(load_config(None, ["channels.mode='BINOCULAR'"])) != config_hash(base)


def test_hash_ignores_selection_and_paths():
    base = config_hash(load_config())
    for ov in ("grid.tasks=['PUR']", "grid.models=['FCN']", "grid.windows=[5]",
               "grid.workers=4", "data.results_dir='/tmp/elsewhere'"):
        assert config_hash(load_config(None, [ov])) == base, ov
    assert config_hash(load_config(None, ["grid.model_seed=1"])) != base


def test_hash_independent_of_key_order():
    a = load_config()
    b = json.loads(json.dumps(a, sort_keys=True))
    b["train"] = dict(reversed(list(b["train"].items())))
    assert config_hash(a) == config_hash(b)
