"""Run configuration: one TOML (or JSON) file, dotted-key overrides, stable hash."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from gazefatigue.ingest import TASKS, MetadataSchema, RecordingSchema, Task
from gazefatigue.nn.models import ModelKind
from gazefatigue.preprocess import WINDOW_DURATIONS, ChannelConfig
from gazefatigue.train import TrainConfig

CACHE_ENV = "GAZEFATIGUE_CACHE_DIR"
RESULTS_ENV = "GAZEFATIGUE_RESULTS_DIR"

DEFAULTS = {
    "data": {
        "data_dir": "data",
        "metadata": "data/metadata.csv",
        "cache_dir": "cache",
        "results_dir": "results",
    },
    "schema": {},
    "metadata_schema": {},
    "channels": ChannelConfig().to_dict(),
    "train": TrainConfig().to_dict(),
    "grid": {
        "tasks": [t.value for t in TASKS],
        "models": [k.value for k in ModelKind],
        "windows": list(WINDOW_DURATIONS),
        "workers": 1,
        "model_seed": 0,
    },
    "stats": {"equal_var": False},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    """Override values are read as TOML scalars/arrays; bare words stay strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, dotted: str, value) -> dict:
    """Set ``a.b.c`` to ``value``; string values are parsed as TOML literals."""
    if isinstance(value, str):
        value = _parse_value(value)
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise KeyError(f"{dotted}: {k} is not a table")
    node[keys[-1]] = value
    return cfg


def load_config(path: str | Path | None = None, overrides=()) -> dict:
    """Defaults, then the file, then ``key=value`` overrides, then env-var dirs."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        loaded = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
        cfg = _merge(cfg, loaded)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        apply_override(cfg, key.strip(), value.strip())
    if os.environ.get(CACHE_ENV):
        cfg["data"]["cache_dir"] = os.environ[CACHE_ENV]
    if os.environ.get(RESULTS_ENV):
        cfg["data"]["results_dir"] = os.environ[RESULTS_ENV]
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    channel_config(cfg)
    train_config(cfg)
    recording_schema(cfg)
    metadata_schema(cfg)
    grid = cfg["grid"]
    for t in grid["tasks"]:
        Task(t)
    for m in grid["models"]:
        ModelKind(m)
    for w in grid["windows"]:
        if w not in WINDOW_DURATIONS:
            raise ValueError(f"window {w} not in {WINDOW_DURATIONS}")


def channel_config(cfg: dict) -> ChannelConfig:
    return ChannelConfig(**cfg["channels"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def recording_schema(cfg: dict) -> RecordingSchema:
    return RecordingSchema.from_dict(cfg.get("schema", {}))


def metadata_schema(cfg: dict) -> MetadataSchema:
    return MetadataSchema.from_dict(cfg.get("metadata_schema", {}))


_SELECTION = ("tasks", "models", "windows", "workers", "limit")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(cfg: dict, sections=("schema", "metadata_schema", "channels", "train", "grid")) -> str:
    """sha256 over the settings that change a cell's result.

    Paths, worker count and the grid's cell selection are left out, so a
    grid restricted to one task shares results with the full grid.
    """
    relevant = {k: cfg.get(k) for k in sections}
    if relevant.get("grid") is not None:
        relevant["grid"] = {k: v for k, v in relevant["grid"].items() if k not in _SELECTION}
    return hashlib.sha256(canonical_json(relevant).encode("utf-8")).hexdigest()[:16]
