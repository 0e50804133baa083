"""Synthetic gaze cohorts for end-to-end testing.

Each participant follows a task-specific stimulus trajectory plus a
mean-reverting noise process driven by white velocity noise.  Fatigued
participants get an extra low-frequency drift and 1.5x the velocity noise.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from gazefatigue.ingest import (RATING_RANGES, TASKS, Gender, Recording, SessionMeta, Task,
                                write_recording)

FATIGUE_NOISE_SCALE = 1.5


def _stimulus(task: Task, t: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free target trajectory (dva) for one task."""
    phase = rng.uniform(0, 2 * np.pi)
    if task == Task.PUR:
        x = 10.0 * np.sin(2 * np.pi * 0.25 * t + phase)
        y = np.zeros_like(t)
    elif task == Task.RAN:
        # jumps to a new random target every 1-1.5 s
        x = np.empty_like(t)
        y = np.empty_like(t)
        start = 0.0
        while start < t[-1] + 1:
            stop = start + rng.uniform(1.0, 1.5)
            sel = (t >= start) & (t < stop)
            x[sel], y[sel] = rng.uniform(-15, 15), rng.uniform(-10, 10)
            start = stop
    elif task == Task.VRG:
        x = np.zeros_like(t)
        y = np.zeros_like(t)
    elif task == Task.TEX:
        # left-to-right reading sweeps with line returns every 4 s
        line = np.floor((t + phase) / 4.0)
        x = -12.0 + 24.0 * (((t + phase) % 4.0) / 4.0)
        y = 6.0 - 2.0 * (line % 6)
    else:  # VID
        x = 6.0 * np.sin(2 * np.pi * 0.1 * t + phase) + 3.0 * np.sin(2 * np.pi * 0.37 * t)
        y = 3.0 * np.cos(2 * np.pi * 0.13 * t + phase)
    return x, y


def _noise(n: int, rate: float, sigma_v: float, rng: np.random.Generator, leak: float = 0.995) -> np.ndarray:
    """AR(1) position process whose increments are white velocity noise (dva/s)."""
    steps = rng.normal(0.0, sigma_v / rate, size=n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = leak * acc + steps[i]
        out[i] = acc
    return out


def synth_recording(participant_id: str, task, fatigued: bool, duration_s: float,
                    rng: np.random.Generator, *, rate: float = 250.0,
                    base_noise: float = 20.0, blink_rate_hz: float = 0.0,
                    session_id: str = "1_1") -> Recording:
    task = Task(task)
    n = int(round(duration_s * rate))
    t_s = np.arange(n) / rate
    sx, sy = _stimulus(task, t_s, rng)
    sigma = base_noise * rng.uniform(0.9, 1.1) * (FATIGUE_NOISE_SCALE if fatigued else 1.0)
    x = sx + _noise(n, rate, sigma, rng)
    y = sy + _noise(n, rate, sigma, rng)
    if fatigued:
        f = rng.uniform(0.05, 0.15)
        amp = rng.uniform(2.0, 4.0)
        x = x + amp * np.sin(2 * np.pi * f * t_s + rng.uniform(0, 2 * np.pi))
        y = y + 0.5 * amp * np.sin(2 * np.pi * f * t_s + rng.uniform(0, 2 * np.pi))
    verg = 1.0 if task == Task.VRG else 0.3
    eye_noise = 0.05 * (FATIGUE_NOISE_SCALE if fatigued else 1.0)
    lx = x + verg + rng.normal(0, eye_noise, n)
    rx = x - verg + rng.normal(0, eye_noise, n)
    ly = y + rng.normal(0, eye_noise, n)
    ry = y + rng.normal(0, eye_noise, n)
    pos_scale = 1e-4 * (FATIGUE_NOISE_SCALE if fatigued else 1.0)
    pos_l = np.array([-0.032, 0.0, 0.0]) + rng.normal(0, pos_scale, (n, 3))
    pos_r = np.array([0.032, 0.0, 0.0]) + rng.normal(0, pos_scale, (n, 3))
    channels = {"x": x, "y": y, "lx": lx, "ly": ly, "rx": rx, "ry": ry}
    channels = {k: np.clip(v, -89.0, 89.0) for k, v in channels.items()}
    if blink_rate_hz > 0:
        for _ in range(rng.poisson(blink_rate_hz * duration_s)):
            start = rng.integers(0, n)
            length = rng.integers(10, 60)  # 40-240 ms
            for v in channels.values():
                v[start:start + length] = np.nan
    return Recording(participant_id=participant_id, session_id=session_id, task=task,
                     t=t_s * 1000.0, sample_rate_hz=rate, pos_l=pos_l, pos_r=pos_r, **channels)


def synth_meta(participant_id: str, fatigued: bool, rng: np.random.Generator,
               session_id: str = "1_1") -> SessionMeta:
    ratings = {}
    for measure, (lo, hi) in RATING_RANGES.items():
        shift = 0.5 if fatigued else 0.0
        pre = float(np.clip(round(rng.normal(lo + 1 + shift, 0.8)), lo, hi))
        post = float(np.clip(pre + rng.integers(-1, 2), lo, hi))
        ratings[measure] = (pre, post)
    return SessionMeta(
        participant_id=participant_id, session_id=session_id,
        age=float(round(rng.normal(21, 3), 1)),
        gender=Gender.FEMALE if rng.random() < 0.53 else Gender.MALE,
        fatigue_label=fatigued,
        hours_slept=float(round(rng.normal(6.8 if fatigued else 7.3, 1.4), 2)),
        subjective=ratings)


def make_cohort(n_participants: int = 40, tasks=TASKS, duration_s: float = 15.0, seed: int = 0,
                fatigue_fraction: float = 0.5, **kwargs) -> tuple[list[Recording], list[SessionMeta]]:
    """Recordings for every (participant, task) plus one metadata row per participant.

    Participant ids are ``"1001"``, ``"1002"``, ...; the first
    ``round(n * fatigue_fraction)`` after a seeded shuffle are fatigued.
    """
    rng = np.random.default_rng(seed)
    n_fat = int(round(n_participants * fatigue_fraction))
    flags = np.zeros(n_participants, dtype=bool)
    flags[rng.permutation(n_participants)[:n_fat]] = True
    recordings, metas = [], []
    for i, fat in enumerate(flags):
        pid = str(1001 + i)
        metas.append(synth_meta(pid, bool(fat), rng))
        for task in tasks:
            recordings.append(synth_recording(pid, task, bool(fat), duration_s, rng, **kwargs))
    return recordings, metas


def write_metadata(metas, path) -> None:
    cols = ["participant_id", "session_id", "age", "gender", "fatigue", "hours_slept"]
    cols += [f"{m}_{when}" for m in RATING_RANGES for when in ("pre", "post")]
    lines = [",".join(cols)]
    for m in metas:
        row = [m.participant_id, m.session_id, repr(m.age), m.gender.value,
               "1" if m.fatigue_label else "0", repr(m.hours_slept)]
        for measure in RATING_RANGES:
            for v in m.rating(measure):
                row.append("" if v is None else repr(v))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_cohort(out_dir, recordings, metas) -> Path:
    """Write recordings as ``S_<pid>_S<session>_<task>.csv`` plus ``metadata.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in recordings:
        write_recording(rec, out / f"S_{rec.participant_id}_S{rec.session_id}_{rec.task.value}.csv")
    write_metadata(metas, out / "metadata.csv")
    return out
