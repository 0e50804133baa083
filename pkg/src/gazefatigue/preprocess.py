"""Gaze-angle conversion, gap repair, channel assembly and windowing."""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from gazefatigue.errors import MissingFatigueLabel, ZeroVector
from gazefatigue.ingest import ANGLE_ROLES, Recording, SessionMeta, Task

WINDOW_DURATIONS = (5, 10, 15, 20)
STD_FLOOR = 1e-8


def vector_to_angles(v) -> tuple:
    """Horizontal and vertical gaze angles (degrees) of a 3D direction vector.

    z is the forward axis.  Accepts a single (x, y, z) or an (N, 3) array;
    the vector need not be unit length.
    """
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    if np.any((x == 0) & (y == 0) & (z == 0)):
        raise ZeroVector("gaze direction has zero length")
    theta_h = np.degrees(np.arctan2(x, np.hypot(y, z)))
    theta_v = np.degrees(np.arctan2(y, z))
    if v.ndim == 1:
        return float(theta_h), float(theta_v)
    return theta_h, theta_v


def angles_to_vector(theta_h, theta_v) -> np.ndarray:
    """Unit direction vector with the given horizontal/vertical angles (degrees)."""
    h = np.radians(theta_h)
    v = np.radians(theta_v)
    return np.stack([np.sin(h), np.cos(h) * np.sin(v), np.cos(h) * np.cos(v)], axis=-1)


class ChannelMode(str, enum.Enum):
    CYCLOPEAN_POS_VEL = "CYCLOPEAN_POS_VEL"   # x, y, dx/dt, dy/dt
    BINOCULAR = "BINOCULAR"                   # lx, ly, rx, ry


class Normalization(str, enum.Enum):
    ZSCORE_TRAIN_STATS = "ZSCORE_TRAIN_STATS"
    NONE = "NONE"


@dataclass(frozen=True)
class ChannelConfig:
    mode: ChannelMode = ChannelMode.CYCLOPEAN_POS_VEL
    normalization: Normalization = Normalization.ZSCORE_TRAIN_STATS
    max_gap_interp_ms: float = 100.0
    max_missing_fraction: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "mode", ChannelMode(self.mode))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise ValueError("max_missing_fraction must lie in [0, 1]")
        if self.max_gap_interp_ms < 0:
            raise ValueError("max_gap_interp_ms must be non-negative")

    @property
    def source_roles(self) -> tuple:
        return ("x", "y") if self.mode == ChannelMode.CYCLOPEAN_POS_VEL else ("lx", "ly", "rx", "ry")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["normalization"] = self.normalization.value
        return d


N_CHANNELS = 4


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) index ranges where ``mask`` is True."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def repair_gaps(rec: Recording, cfg: ChannelConfig = ChannelConfig()) -> Recording:
    """Linearly interpolate short runs of missing angle samples.

    A run is filled when it lasts at most ``cfg.max_gap_interp_ms`` (run
    length times the nominal sample interval) and has a valid sample on both
    sides.  Longer runs and runs touching either end stay missing.
    """
    interval_ms = 1000.0 / rec.sample_rate_hz
    repaired = np.zeros(len(rec), dtype=bool) if rec.repaired is None else rec.repaired.copy()
    channels = {}
    for role in ANGLE_ROLES:
        values = np.array(getattr(rec, role))
        for start, stop in _runs(np.isnan(values)):
            if start == 0 or stop == len(values):
                continue
            if (stop - start) * interval_ms > cfg.max_gap_interp_ms:
                continue
            values[start:stop] = np.interp(rec.t[start:stop], [rec.t[start - 1], rec.t[stop]],
                                           [values[start - 1], values[stop]])
            repaired[start:stop] = True
        channels[role] = values
    return rec.replace(repaired=repaired, **channels)


@dataclass(frozen=True, eq=False)
class Window:
    participant_id: str
    task: Task
    label: bool
    start_ms: float
    duration_s: int
    data: np.ndarray  # N_CHANNELS x L
    session_id: str = "0"

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "task", Task(self.task))

    @property
    def length(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "Window":
        return Window(self.participant_id, self.task, self.label, self.start_ms,
                      self.duration_s, data, self.session_id)


def window_length(duration_s: float, sample_rate_hz: float = 250.0) -> int:
    return int(round(duration_s * sample_rate_hz))


def make_windows(rec: Recording, meta: SessionMeta, duration_s: int,
                 cfg: ChannelConfig = ChannelConfig()) -> list[Window]:
    """Cut ``rec`` into consecutive non-overlapping windows from its first sample.

    A window is dropped when any of its source samples is still missing or
    when more than ``cfg.max_missing_fraction`` of it was filled by gap
    repair.  The trailing partial window is dropped.  ``start_ms`` is the
    offset from the first timestamp.  Run :func:`repair_gaps` first to
    salvage windows with short blinks.
    """
    if duration_s not in WINDOW_DURATIONS:
        raise ValueError(f"duration_s must be one of {WINDOW_DURATIONS}, got {duration_s}")
    if meta.fatigue_label is None:
        raise MissingFatigueLabel(f"participant {meta.participant_id} has no fatigue label")
    n = window_length(duration_s, rec.sample_rate_hz)
    roles = cfg.source_roles
    source = np.stack([getattr(rec, r) for r in roles])
    repaired = rec.repaired if rec.repaired is not None else np.zeros(len(rec), dtype=bool)
    windows = []
    for k in range(len(rec) // n):
        lo, hi = k * n, (k + 1) * n
        seg = source[:, lo:hi]
        if np.isnan(seg).any():
            continue
        if repaired[lo:hi].mean() > cfg.max_missing_fraction:
            continue
        if cfg.mode == ChannelMode.CYCLOPEAN_POS_VEL:
            vel = np.diff(seg, axis=1) * rec.sample_rate_hz
            vel = np.concatenate([vel[:, :1], vel], axis=1)
            data = np.concatenate([seg, vel])
        else:
            data = seg
        windows.append(Window(rec.participant_id, rec.task, bool(meta.fatigue_label),
                              float(rec.t[lo] - rec.t[0]), duration_s, data, rec.session_id))
    return windows


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, batch: np.ndarray) -> np.ndarray:
        return (batch - self.mean[:, None]) / self.std[:, None]


def fit_normalizer(train_windows: Sequence[Window]) -> Normalizer:
    """Per-channel mean and (population) std over all samples of all training windows."""
    if len(train_windows) == 0:
        raise ValueError("cannot fit a normalizer on zero windows")
    stacked = np.concatenate([w.data for w in train_windows], axis=1)
    mean = stacked.mean(axis=1)
    std = np.maximum(stacked.std(axis=1), STD_FLOOR)
    return Normalizer(mean, std)


def apply_normalizer(w: Window, nrm: Normalizer) -> Window:
    return w.with_data(nrm.apply(w.data))


def stack_windows(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    """(B x 4 x L data, B labels as 0/1)."""
    x = np.stack([w.data for w in windows])
    y = np.array([int(w.label) for w in windows])
    return x, y


# --- window cache ---------------------------------------------------------------
#
# magic  b"GZWIN\0\1\0"          8 bytes
# hlen   uint64 little-endian    length of the JSON header in bytes
# header UTF-8 JSON              {"shape": [N, C, L], "dtype": "<f8", "config_hash": str,
#                                 "channel_config": {...}, "windows": [per-window fields]}
# data   N*C*L values, row-major, dtype as in the header

CACHE_MAGIC = b"GZWIN\x00\x01\x00"


def save_windows(windows: Sequence[Window], path: str | Path, config_hash: str = "",
                 channel_config: ChannelConfig | None = None) -> None:
    lengths = {w.data.shape for w in windows}
    if len(lengths) > 1:
        raise ValueError("all windows in one cache file must share a shape")
    shape = (len(windows),) + (lengths.pop() if windows else (N_CHANNELS, 0))
    header = {
        "shape": list(shape),
        "dtype": "<f8",
        "config_hash": config_hash,
        "channel_config": channel_config.to_dict() if channel_config else None,
        "windows": [{"participant_id": w.participant_id, "session_id": w.session_id,
                     "task": w.task.value, "label": w.label, "start_ms": w.start_ms,
                     "duration_s": w.duration_s} for w in windows],
    }
    blob = json.dumps(header).encode("utf-8")
    data = np.stack([w.data for w in windows]).astype("<f8") if windows else np.zeros(0, "<f8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(data).tobytes())
    tmp.replace(path)


def read_cache_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != CACHE_MAGIC:
            raise ValueError(f"{path}: not a window cache file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(hlen).decode("utf-8"))


def load_windows(path: str | Path) -> tuple[list[Window], dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != CACHE_MAGIC:
            raise ValueError(f"{path}: not a window cache file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype=header["dtype"]).reshape(header["shape"])
    windows = [Window(data=data[i], **meta) for i, meta in enumerate(header["windows"])]
    return windows, header
