"""Reading GazeBaseVR-style recordings and participant metadata.

A recording file is a CSV with a header row; an empty field means the value
is missing (blink or tracking loss).  Header names are bound to signal roles
through :class:`RecordingSchema`, whose defaults follow the public
GazeBaseVR release (``n, x, y, lx, ly, rx, ry`` plus ``clx..crz`` eye-centre
positions).
"""
from __future__ import annotations

import enum
import json
import logging
import math
import re
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np
import pandas as pd

from gazefatigue.errors import (EmptyRecording, GazeFatigueError, MissingColumn,
                                NonMonotoneTime, SampleRateMismatch)

log = logging.getLogger(__name__)

ANGLE_ROLES = ("x", "y", "lx", "ly", "rx", "ry")
VECTOR_ROLES = ("pos_l", "pos_r", "dir_l", "dir_r")
MAX_ANGLE_DVA = 90.0


class Task(str, enum.Enum):
    VRG = "VRG"
    PUR = "PUR"
    VID = "VID"
    TEX = "TEX"
    RAN = "RAN"


TASKS = tuple(Task)


@dataclass(frozen=True)
class RecordingSchema:
    """Maps signal roles to CSV header names.

    ``vectors`` maps each optional 3-vector role to its three column names, or
    leaves it out when the source has no such columns.
    """

    time: str = "n"
    angles: dict = field(default_factory=lambda: {r: r for r in ANGLE_ROLES})
    vectors: dict = field(default_factory=lambda: {
        "pos_l": ("clx", "cly", "clz"),
        "pos_r": ("crx", "cry", "crz"),
    })
    sample_rate_hz: float = 250.0
    filename_pattern: str = r"S_(?P<participant>\d+)_S(?P<session>\d+_\d+)_(?P<task>[A-Z]{3})"

    @classmethod
    def from_dict(cls, d: dict) -> "RecordingSchema":
        d = dict(d)
        if "vectors" in d:
            d["vectors"] = {k: tuple(v) for k, v in d["vectors"].items() if v}
        if "angles" in d:
            d["angles"] = {**{r: r for r in ANGLE_ROLES}, **d["angles"]}
        return cls(**d)

    def identify(self, path: str | Path) -> dict:
        m = re.search(self.filename_pattern, Path(path).name)
        return m.groupdict() if m else {}


DEFAULT_SCHEMA = RecordingSchema()


class GazeSample(NamedTuple):
    n: float
    x: float
    y: float
    lx: float
    ly: float
    rx: float
    ry: float
    pos_l: Optional[tuple] = None
    pos_r: Optional[tuple] = None
    dir_l: Optional[tuple] = None
    dir_r: Optional[tuple] = None


@dataclass
class ParseReport:
    path: str
    rows: int = 0
    gaps: int = 0
    duplicates_dropped: int = 0
    missing_time_dropped: int = 0
    out_of_range: int = 0
    errors: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"path": self.path, "rows": self.rows, "gaps": self.gaps,
                           "duplicates_dropped": self.duplicates_dropped,
                           "missing_time_dropped": self.missing_time_dropped,
                           "out_of_range": self.out_of_range, "errors": self.errors})


def _freeze(a):
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Recording:
    """One task session as column arrays; immutable once built.

    Missing angle values are NaN.  ``repaired`` marks samples filled in by
    gap repair (None for a raw recording).
    """

    participant_id: str
    session_id: str
    task: Task
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    rx: np.ndarray
    ry: np.ndarray
    pos_l: Optional[np.ndarray] = None
    pos_r: Optional[np.ndarray] = None
    dir_l: Optional[np.ndarray] = None
    dir_r: Optional[np.ndarray] = None
    sample_rate_hz: float = 250.0
    repaired: Optional[np.ndarray] = None
    report: Optional[ParseReport] = None

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        for name in ("t",) + ANGLE_ROLES + VECTOR_ROLES:
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        if self.repaired is not None:
            r = np.array(self.repaired, dtype=bool)
            r.flags.writeable = False
            object.__setattr__(self, "repaired", r)
        if len(self.t) == 0:
            raise EmptyRecording(f"{self.participant_id}/{self.task.value}: no samples")
        for name in ANGLE_ROLES:
            if len(getattr(self, name)) != len(self.t):
                raise ValueError(f"channel {name} length differs from timestamps")

    def __len__(self) -> int:
        return len(self.t)

    def angle(self, role: str) -> np.ndarray:
        return getattr(self, role)

    def missing_mask(self, roles: Iterable[str] = ANGLE_ROLES) -> np.ndarray:
        mask = np.zeros(len(self), dtype=bool)
        for r in roles:
            mask |= np.isnan(getattr(self, r))
        return mask

    @property
    def gap_count(self) -> int:
        return int(self.missing_mask().sum())

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def median_interval_ms(self) -> float:
        return float(np.median(np.diff(self.t))) if len(self) > 1 else float("nan")

    def sample(self, i: int) -> GazeSample:
        vec = {r: (tuple(getattr(self, r)[i]) if getattr(self, r) is not None else None)
               for r in VECTOR_ROLES}
        return GazeSample(self.t[i], *(getattr(self, r)[i] for r in ANGLE_ROLES), **vec)

    @property
    def samples(self) -> Iterator[GazeSample]:
        return (self.sample(i) for i in range(len(self)))

    def replace(self, **changes) -> "Recording":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return Recording(**fields)


def _to_float(series: pd.Series) -> np.ndarray:
    # pandas' own float parser is not correctly rounded, which breaks
    # bitwise round trips; Python's float() is
    raw = series.to_numpy(dtype=object)
    raw = np.where(raw == "", "nan", raw)
    try:
        return raw.astype(float)
    except ValueError:
        out = np.empty(len(raw))
        for i, v in enumerate(raw):
            try:
                out[i] = float(v)
            except ValueError:
                out[i] = np.nan
        return out


def parse_recording(path: str | Path, schema: RecordingSchema = DEFAULT_SCHEMA, *,
                    participant_id: str | None = None, session_id: str | None = None,
                    task: str | None = None) -> Recording:
    """Parse and validate one recording CSV.

    Identity fields default to what ``schema.filename_pattern`` extracts from
    the file name.  Duplicate timestamps keep the first row; a decreasing
    timestamp raises :class:`NonMonotoneTime`.
    """
    path = Path(path)
    report = ParseReport(path=str(path))
    ident = schema.identify(path)
    participant_id = participant_id or ident.get("participant") or path.stem
    session_id = session_id or ident.get("session") or "0"
    task = task or ident.get("task")
    if task is None:
        raise ValueError(f"{path.name}: task not given and not found in file name")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyRecording(f"{path}: file is empty") from None
    required = [schema.time] + [schema.angles[r] for r in ANGLE_ROLES]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise MissingColumn(f"{path.name}: missing required column(s) {missing}")
    if len(df) == 0:
        raise EmptyRecording(f"{path}: no data rows")

    t = _to_float(df[schema.time])
    keep = ~np.isnan(t)
    report.missing_time_dropped = int((~keep).sum())
    if report.missing_time_dropped:
        log.warning("%s: dropped %d rows without a timestamp", path.name, report.missing_time_dropped)
    df, t = df[keep], t[keep]
    if len(t) == 0:
        raise EmptyRecording(f"{path}: no rows with a timestamp")

    step = np.diff(t)
    if np.any(step < 0):
        first = int(np.argmax(step < 0)) + 1
        raise NonMonotoneTime(f"{path.name}: timestamp decreases at data row {first}")
    dup = np.concatenate([[False], step == 0])
    report.duplicates_dropped = int(dup.sum())
    if report.duplicates_dropped:
        log.info("%s: dropped %d duplicate timestamps", path.name, report.duplicates_dropped)
    df, t = df[~dup], t[~dup]

    angles = {}
    for role in ANGLE_ROLES:
        values = _to_float(df[schema.angles[role]])
        bad = np.abs(values) > MAX_ANGLE_DVA
        report.out_of_range += int(bad.sum())
        values[bad] = np.nan
        angles[role] = values

    vectors = {}
    for role, cols in schema.vectors.items():
        if not cols or not all(c in df.columns for c in cols):
            continue
        v = np.column_stack([_to_float(df[c]) for c in cols])
        if role.startswith("dir"):
            norm = np.linalg.norm(v, axis=1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                v = np.where(norm > 0, v / norm, np.nan)
        vectors[role] = v

    rec = Recording(participant_id=str(participant_id), session_id=str(session_id), task=task,
                    t=t, sample_rate_hz=schema.sample_rate_hz, report=report, **angles, **vectors)
    report.rows = len(rec)
    report.gaps = rec.gap_count
    if len(rec) > 1:
        nominal = 1000.0 / schema.sample_rate_hz
        observed = rec.median_interval_ms()
        if abs(observed - nominal) > 0.2 * nominal:
            raise SampleRateMismatch(
                f"{path.name}: median interval {observed:g} ms, expected {nominal:g} ms")
    return rec


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_recording(rec: Recording, path: str | Path, schema: RecordingSchema = DEFAULT_SCHEMA) -> None:
    """Write a recording back to CSV; floats use their shortest round-trip text."""
    cols = {schema.time: rec.t}
    for role in ANGLE_ROLES:
        cols[schema.angles[role]] = getattr(rec, role)
    for role, names in schema.vectors.items():
        arr = getattr(rec, role)
        if arr is not None and names:
            for j, name in enumerate(names):
                cols[name] = arr[:, j]
    lines = [",".join(cols)]
    data = list(cols.values())
    for i in range(len(rec)):
        lines.append(",".join(_fmt(col[i]) for col in data))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_one(args):
    path, schema = args
    try:
        rec = parse_recording(path, schema)
        return rec, rec.report
    except (GazeFatigueError, ValueError, OSError, UnicodeDecodeError) as exc:
        return None, ParseReport(path=str(path), errors=[f"{type(exc).__name__}: {exc}"])


def parse_directory(data_dir: str | Path, schema: RecordingSchema = DEFAULT_SCHEMA,
                    workers: int = 1) -> tuple[list[Recording], list[ParseReport]]:
    """Parse every ``*.csv`` under ``data_dir`` whose name matches the schema pattern.

    Files that fail to parse are reported, not raised.
    """
    paths = sorted(p for p in Path(data_dir).rglob("*.csv") if schema.identify(p))
    jobs = [(p, schema) for p in paths]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_parse_one, jobs))
    else:
        results = [_parse_one(j) for j in jobs]
    recordings = [r for r, _ in results if r is not None]
    return recordings, [rep for _, rep in results]


def write_parse_report(reports: Iterable[ParseReport], path: str | Path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")


# --- metadata -----------------------------------------------------------------

RATING_RANGES = {
    "sleepiness": (1, 7),
    "neck_fatigue": (1, 5),
    "physical_comfort": (1, 6),
    "mental_effort": (1, 5),
    "physical_effort": (1, 5),
}


class Gender(str, enum.Enum):
    FEMALE = "F"
    MALE = "M"
    OTHER = "O"
    UNKNOWN = "U"


def _gender(value) -> Gender:
    v = str(value).strip().lower()
    if v in ("f", "female", "woman", "w"):
        return Gender.FEMALE
    if v in ("m", "male", "man"):
        return Gender.MALE
    if v in ("", "nan", "none", "na", "u", "unknown"):
        return Gender.UNKNOWN
    return Gender.OTHER


@dataclass(frozen=True)
class SessionMeta:
    participant_id: str
    session_id: str = "0"
    age: Optional[float] = None
    gender: Gender = Gender.UNKNOWN
    fatigue_label: Optional[bool] = None
    hours_slept: Optional[float] = None
    # measure -> (pre, post), either may be None
    subjective: dict = field(default_factory=dict)

    def __post_init__(self):
        for measure, (pre, post) in self.subjective.items():
            lo, hi = RATING_RANGES[measure]
            for v in (pre, post):
                if v is not None and not lo <= v <= hi:
                    raise ValueError(f"{measure}={v} outside [{lo}, {hi}]")

    def rating(self, measure: str) -> tuple:
        return self.subjective.get(measure, (None, None))


@dataclass(frozen=True)
class MetadataSchema:
    """Column bindings for the metadata CSV.

    ``ratings`` maps each measure to its (pre, post) columns; bind them to
    whatever the metadata release uses.
    """

    participant_id: str = "participant_id"
    session_id: str | None = "session_id"
    age: str = "age"
    gender: str = "gender"
    fatigue: str = "fatigue"
    hours_slept: str = "hours_slept"
    ratings: dict = field(default_factory=lambda: {
        m: (f"{m}_pre", f"{m}_post") for m in RATING_RANGES})
    # numeric fatigue levels at or above this count as fatigued
    fatigue_threshold: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "MetadataSchema":
        d = dict(d)
        if "ratings" in d:
            d["ratings"] = {k: tuple(v) for k, v in d["ratings"].items()}
        return cls(**d)


_TRUE = {"1", "true", "yes", "y", "fatigue", "fatigued", "t"}
_FALSE = {"0", "false", "no", "n", "none", "no fatigue", "not fatigued", "f"}


def _fatigue(value, threshold) -> Optional[bool]:
    v = str(value).strip().lower()
    try:
        num = float(v)
    except ValueError:
        num = None
    if num is not None and threshold is not None:
        return None if math.isnan(num) else num >= threshold
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    if num is None or math.isnan(num):
        return None
    return num > 0


def _num(value) -> Optional[float]:
    try:
        f = float(value)
    except (TypeError, ValueError):
        return None
    return None if math.isnan(f) else f


def load_metadata(path: str | Path, schema: MetadataSchema = MetadataSchema(),
                  include_unlabeled: bool = False) -> list[SessionMeta]:
    """One :class:`SessionMeta` per metadata row.

    Rows without a derivable fatigue label are skipped with a warning unless
    ``include_unlabeled`` is set (their label is then None).  Ratings outside
    their documented range are dropped with a warning.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        log.warning("%s: metadata file is empty", path)
        return []
    if len(df) == 0:
        log.warning("%s: metadata file has no rows", path)
        return []
    if schema.participant_id not in df.columns:
        raise MissingColumn(f"{path.name}: no participant column {schema.participant_id!r}")

    metas = []
    unlabeled = []
    for _, row in df.iterrows():
        pid = str(row[schema.participant_id]).strip()
        label = _fatigue(row[schema.fatigue], schema.fatigue_threshold) if schema.fatigue in df else None
        if label is None:
            unlabeled.append(pid)
            if not include_unlabeled:
                continue
        subjective = {}
        for measure, (pre_col, post_col) in schema.ratings.items():
            lo, hi = RATING_RANGES[measure]
            pair = []
            for col in (pre_col, post_col):
                v = _num(row[col]) if col in df else None
                if v is not None and not lo <= v <= hi:
                    log.warning("participant %s: %s=%g outside [%g, %g], ignored", pid, col, v, lo, hi)
                    v = None
                pair.append(v)
            if pair != [None, None]:
                subjective[measure] = tuple(pair)
        session = str(row[schema.session_id]).strip() if schema.session_id in df else "0"
        metas.append(SessionMeta(
            participant_id=pid, session_id=session or "0",
            age=_num(row[schema.age]) if schema.age in df else None,
            gender=_gender(row[schema.gender]) if schema.gender in df else Gender.UNKNOWN,
            fatigue_label=label,
            hours_slept=_num(row[schema.hours_slept]) if schema.hours_slept in df else None,
            subjective=subjective))
    if unlabeled:
        log.warning("%d participant row(s) lack a fatigue label%s: %s", len(unlabeled),
                    "" if include_unlabeled else " and were excluded", ", ".join(unlabeled[:10]))
    return metas


def _mean_std(values) -> tuple[float, float]:
    v = np.array([x for x in values if x is not None], dtype=float)
    if len(v) == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else float("nan")


def metadata_summary(metas: Iterable[SessionMeta]) -> pd.DataFrame:
    """Demographic summary, one row per category, counted per unique participant.

    When a participant has several sessions the first one seen is used.
    """
    first: dict[str, SessionMeta] = {}
    for m in metas:
        first.setdefault(m.participant_id, m)
    people = list(first.values())
    groups = [
        ("all", people),
        ("female", [m for m in people if m.gender == Gender.FEMALE]),
        ("male", [m for m in people if m.gender == Gender.MALE]),
        ("no_fatigue", [m for m in people if m.fatigue_label is False]),
        ("fatigue", [m for m in people if m.fatigue_label is True]),
    ]
    rows = []
    for name, members in groups:
        age_m, age_s = _mean_std(m.age for m in members)
        hs_m, hs_s = _mean_std(m.hours_slept for m in members)
        rows.append({"category": name, "count": len(members), "age_mean": age_m, "age_std": age_s,
                     "hours_slept_mean": hs_m, "hours_slept_std": hs_s})
    return pd.DataFrame(rows).set_index("category")


# --- index ----------------------------------------------------------------------

@dataclass(frozen=True)
class IndexedRecording:
    recording: Recording
    meta: Optional[SessionMeta]


@dataclass
class SessionIndex:
    entries: dict = field(default_factory=dict)   # (participant_id, Task) -> [IndexedRecording]
    orphans: list = field(default_factory=list)   # recordings without metadata

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def lookup(self, participant_id: str, task) -> list[IndexedRecording]:
        return self.entries.get((str(participant_id), Task(task)), [])

    def by_task(self, task) -> list[IndexedRecording]:
        task = Task(task)
        return [e for (pid, t), items in sorted(self.entries.items()) if t == task for e in items]

    @property
    def tasks(self) -> set:
        return {t for _, t in self.entries}

    @property
    def participants(self) -> list[str]:
        return sorted({pid for pid, _ in self.entries})


def index_sessions(recordings: Iterable[Recording], metas: Iterable[SessionMeta]) -> SessionIndex:
    """Group recordings by (participant, task) and attach metadata.

    Metadata is matched on (participant, session) first, then participant
    alone.  Recordings with no metadata stay in the index (meta None) and are
    also listed in ``orphans``.
    """
    by_session = {}
    by_pid = {}
    for m in metas:
        by_session.setdefault((m.participant_id, m.session_id), m)
        by_pid.setdefault(m.participant_id, m)
    entries = defaultdict(list)
    orphans = []
    for rec in recordings:
        meta = by_session.get((rec.participant_id, rec.session_id)) or by_pid.get(rec.participant_id)
        if meta is None:
            orphans.append(rec)
        entries[(rec.participant_id, rec.task)].append(IndexedRecording(rec, meta))
    if orphans:
        log.warning("%d recording(s) have no participant metadata", len(orphans))
    return SessionIndex(dict(entries), orphans)
