"""The task x model x window-length experiment grid, with a resumable manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gazefatigue import __version__
from gazefatigue.config import channel_config, config_hash, train_config
from gazefatigue.errors import EmptyTestSet, GazeFatigueError
from gazefatigue.ingest import SessionIndex, Task
from gazefatigue.nn.models import ModelKind, ModelSpec, build_model
from gazefatigue.preprocess import (Normalization, apply_normalizer, fit_normalizer, make_windows, repair_gaps,
                                    stack_windows, window_length)
from gazefatigue.train import accuracy, evaluate_scores, predict_proba, split_users, train

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["task", "model", "window", "accuracy", "auc", "n_test", "seed",
                  "participant_accuracy", "train_accuracy", "n_test_participants", "config_hash"]


def cell_id(task, model, window) -> str:
    return f"{Task(task).value}/{ModelKind(model).value}/{int(window)}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def fingerprint_index(index: SessionIndex) -> dict:
    """Recording count, total samples and a checksum over signals and labels."""
    h = hashlib.sha256()
    rows = 0
    keys = sorted(index.entries)
    for key in keys:
        for entry in index.entries[key]:
            rec = entry.recording
            rows += len(rec)
            h.update(f"{rec.participant_id}|{rec.session_id}|{rec.task.value}|".encode())
            h.update(f"{None if entry.meta is None else entry.meta.fatigue_label}|".encode())
            for role in ("t", "x", "y", "lx", "ly", "rx", "ry"):
                h.update(np.ascontiguousarray(getattr(rec, role), dtype="<f8").tobytes())
    return {"file_count": len(index), "total_rows": rows, "checksum": h.hexdigest()}


class Manifest:
    """Completed and failed cells for one config hash; written atomically by one process."""

    def __init__(self, path: Path, cfg_hash: str, fingerprint: dict):
        self.path = Path(path)
        self._lock = threading.Lock()
        now = time.strftime("%Y-%m-%dT%H:%M:%S")
        data = None
        if self.path.exists():
            data = json.loads(self.path.read_text(encoding="utf-8"))
            if data.get("config_hash") != cfg_hash or data.get("dataset") != fingerprint:
                log.warning("manifest %s is for another config or dataset; starting over", self.path)
                data = None
        if data is None:
            data = {"config_hash": cfg_hash, "dataset": fingerprint, "tool_version": __version__,
                    "created": now, "updated": now, "completed": {}, "failed": {}}
        self.data = data

    @property
    def completed(self) -> dict:
        return self.data["completed"]

    def _save(self) -> None:
        self.data["updated"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        _atomic_write(self.path, json.dumps(self.data, indent=1, sort_keys=True))

    def mark_done(self, cid: str, rel_path: str) -> None:
        with self._lock:
            self.data["completed"][cid] = rel_path
            self.data["failed"].pop(cid, None)
            self._save()

    def mark_failed(self, cid: str, error: str) -> None:
        with self._lock:
            self.data["failed"][cid] = error
            self._save()


@dataclass
class CellJob:
    task: str
    model: str
    window: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    test_pids: list
    train_ids: list
    test_ids: list
    train_cfg: dict
    model_seed: int
    cfg_hash: str

    @property
    def id(self) -> str:
        return cell_id(self.task, self.model, self.window)


def run_cell(job: CellJob) -> dict:
    """Train and evaluate one cell; returns the EvalResult as a dict."""
    return train_cell(job)[1]


def train_cell(job: CellJob):
    """(trained model, EvalResult dict) for one cell."""
    if set(job.train_ids) & set(job.test_ids):
        raise AssertionError(f"{job.id}: participants in both train and test")
    if len(job.x_test) == 0:
        raise EmptyTestSet(f"{job.id}: no test windows")
    cfg = train_config({"train": job.train_cfg})
    spec = ModelSpec(job.model, job.x_train.shape[2], seed=job.model_seed)
    model = build_model(spec, dtype=np.dtype(cfg.dtype))
    model, curve = train(model, (job.x_train, job.y_train), cfg)
    scores = predict_proba(model, job.x_test.astype(model.dtype))
    res = evaluate_scores(scores, job.y_test, job.test_pids, task=job.task, model=job.model,
                          duration_s=job.window, seed=cfg.seed, config_hash=job.cfg_hash)
    res.loss_curve = [float(v) for v in curve]
    res.train_accuracy = accuracy(predict_proba(model, job.x_train.astype(model.dtype)), job.y_train)
    res.train_participants = list(job.train_ids)
    res.test_participants = list(job.test_ids)
    if set(res.train_participants) & set(map(str, job.test_pids)):
        raise AssertionError(f"{job.id}: test windows from a training participant")
    return model, res.to_dict()


def _task_split(index: SessionIndex, task: Task, tcfg):
    labels = {}
    for entry in index.by_task(task):
        if entry.meta is not None and entry.meta.fatigue_label is not None:
            labels[entry.recording.participant_id] = entry.meta.fatigue_label
    pids = sorted(labels)
    return split_users(pids, [labels[p] for p in pids], tcfg.split_fraction, tcfg.seed,
                       tcfg.stratify)


def _windows(index: SessionIndex, task: Task, pids, duration, ccfg):
    out = []
    for pid in pids:
        for entry in index.lookup(pid, task):
            rec = repair_gaps(entry.recording, ccfg)
            out += make_windows(rec, entry.meta, duration, ccfg)
    return out


def plan_jobs(index: SessionIndex, cfg: dict, skip=frozenset(), limit: int | None = None):
    """Yield (cell id, CellJob | exception) for every selected, not-yet-done cell.

    The normalizer is fitted on each cell's training windows only.
    """
    grid = cfg["grid"]
    ccfg = channel_config(cfg)
    tcfg = train_config(cfg)
    chash = config_hash(cfg)
    n = 0
    for task in map(Task, grid["tasks"]):
        todo = [(w, m) for w in grid["windows"] for m in grid["models"]
                if cell_id(task, m, w) not in skip]
        if not todo:
            continue
        try:
            train_ids, test_ids = _task_split(index, task, tcfg)
        except GazeFatigueError as exc:
            for w, m in todo:
                if limit is not None and n >= limit:
                    return
                n += 1
                yield cell_id(task, m, w), exc
            continue
        for w in grid["windows"]:
            models = [m for ww, m in todo if ww == w]
            if not models:
                continue
            if limit is not None and n >= limit:
                return
            tr = _windows(index, task, train_ids, w, ccfg)
            te = _windows(index, task, test_ids, w, ccfg)
            if tr:
                nrm = fit_normalizer(tr) if ccfg.normalization == Normalization.ZSCORE_TRAIN_STATS else None
                if nrm is not None:
                    tr = [apply_normalizer(x, nrm) for x in tr]
                    te = [apply_normalizer(x, nrm) for x in te]
            L = window_length(w)
            x_tr, y_tr = stack_windows(tr) if tr else (np.zeros((0, 4, L)), np.zeros(0, int))
            x_te, y_te = stack_windows(te) if te else (np.zeros((0, 4, L)), np.zeros(0, int))
            for m in models:
                if limit is not None and n >= limit:
                    return
                n += 1
                yield cell_id(task, m, w), CellJob(
                    task.value, ModelKind(m).value, int(w), x_tr, y_tr, x_te, y_te,
                    [x.participant_id for x in te], train_ids, test_ids, tcfg.to_dict(),
                    int(grid.get("model_seed", 0)), chash)


def _run_safe(job: CellJob):
    try:
        return job.id, run_cell(job), None
    except (GazeFatigueError, ValueError, FloatingPointError) as exc:
        return job.id, None, f"{type(exc).__name__}: {exc}"


def run_grid(index: SessionIndex, cfg: dict, out_dir, *, limit: int | None = None,
             workers: int | None = None, fingerprint: dict | None = None,
             progress=None) -> list[dict]:
    """Run every selected cell not already completed under this config hash.

    Cell results go to ``out_dir/cells/<task>_<model>_<window>.json`` and the
    manifest to ``out_dir/manifest.json``; only this process writes them.
    Per-cell failures are recorded and the remaining cells continue.
    ``limit`` caps how many cells this call trains.  Returns the results of
    every completed cell, old and new, in grid order; ``results.csv`` is
    rewritten to match.
    """
    out = Path(out_dir)
    chash = config_hash(cfg)
    fingerprint = fingerprint if fingerprint is not None else fingerprint_index(index)
    manifest = Manifest(out / "manifest.json", chash, fingerprint)
    workers = workers if workers is not None else int(cfg["grid"].get("workers", 1))

    def record(cid, result, error):
        if error is not None:
            log.error("cell %s failed: %s", cid, error)
            manifest.mark_failed(cid, error)
        else:
            rel = "cells/" + cid.replace("/", "_") + ".json"
            result["resolved_config"] = cfg
            _atomic_write(out / rel, json.dumps(result, indent=1, sort_keys=True))
            manifest.mark_done(cid, rel)
        if progress is not None:
            progress(cid, error)

    jobs = plan_jobs(index, cfg, skip=frozenset(manifest.completed), limit=limit)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            pending = []
            for cid, job in jobs:
                if isinstance(job, Exception):
                    record(cid, None, f"{type(job).__name__}: {job}")
                else:
                    pending.append(pool.submit(_run_safe, job))
            for fut in pending:
                record(*fut.result())
    else:
        for cid, job in jobs:
            if isinstance(job, Exception):
                record(cid, None, f"{type(job).__name__}: {job}")
            else:
                record(*_run_safe(job))
    results = collect_results(out, cfg)
    write_results_csv(results, out / "results.csv")
    return results


def collect_results(out_dir, cfg: dict | None = None) -> list[dict]:
    """Completed cell results listed in the manifest, in grid order."""
    out = Path(out_dir)
    path = out / "manifest.json"
    if not path.exists():
        return []
    manifest = json.loads(path.read_text(encoding="utf-8"))
    results = []
    for cid, rel in manifest["completed"].items():
        d = json.loads((out / rel).read_text(encoding="utf-8"))
        if d.get("config_hash") != manifest["config_hash"]:
            log.warning("%s: config hash differs from the manifest; ignored", rel)
            continue
        results.append(d)
    order_t = {t.value: i for i, t in enumerate(Task)}
    order_m = {k.value: i for i, k in enumerate(ModelKind)}
    results.sort(key=lambda d: (order_t[d["task"]], order_m[d["model"]], d["duration_s"]))
    return results


def write_results_csv(results: list[dict], path) -> None:
    lines = []
    for d in results:
        lines.append({"task": d["task"], "model": d["model"], "window": d["duration_s"],
                      "accuracy": repr(d["accuracy"]), "auc": repr(d["auc"]),
                      "n_test": d["n_test_windows"], "seed": d["seed"],
                      "participant_accuracy": repr(d["participant_accuracy"]),
                      "train_accuracy": repr(d["train_accuracy"]),
                      "n_test_participants": d["n_test_participants"],
                      "config_hash": d["config_hash"]})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(lines)
    os.replace(tmp, path)
