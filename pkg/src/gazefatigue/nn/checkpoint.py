"""JSON-wrapped model checkpoints.

Layout::

    {"format": "gazefatigue-checkpoint/1",
     "spec": {...ModelSpec...}, "seed": int, "dtype": "float32"|"float64",
     "config_hash": str,
     "parameters": [{"name", "shape", "dtype", "data": base64 little-endian}],
     "buffers":    [same]}

Arrays are stored as raw little-endian bytes so a save/load cycle is bitwise.
"""
from __future__ import annotations

import base64
import json
import os
from pathlib import Path

import numpy as np

from gazefatigue.nn.models import Model, ModelSpec, build_model

FORMAT = "gazefatigue-checkpoint/1"


def _encode(name: str, arr: np.ndarray) -> dict:
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
            "data": base64.b64encode(np.ascontiguousarray(le).tobytes()).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    dtype = np.dtype(entry["dtype"]).newbyteorder("<")
    return np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).astype(entry["dtype"])


def to_dict(model: Model, config_hash: str = "") -> dict:
    return {
        "format": FORMAT,
        "spec": model.spec.to_dict(),
        "seed": model.spec.seed,
        "dtype": model.dtype.name,
        "config_hash": config_hash,
        "parameters": [_encode(n, p) for n, p in model.net.named_parameters()],
        "buffers": [_encode(n, b) for n, b in model.net.named_buffers()],
    }


def from_dict(payload: dict) -> Model:
    if payload.get("format") != FORMAT:
        raise ValueError(f"unknown checkpoint format {payload.get('format')!r}")
    model = build_model(ModelSpec.from_dict(payload["spec"]), dtype=np.dtype(payload["dtype"]))
    for entry in payload["parameters"]:
        model.net.set_array(entry["name"], _decode(entry), "params")
    for entry in payload["buffers"]:
        model.net.set_array(entry["name"], _decode(entry), "buffers")
    model.net.zero_grad()
    return model


def save(model: Model, path: str | os.PathLike, config_hash: str = "") -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(to_dict(model, config_hash)))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> Model:
    return from_dict(json.loads(Path(path).read_text()))
