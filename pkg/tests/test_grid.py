import csv
import json

import numpy as np
import pytest

from gazefatigue.config import config_hash, load_config
from gazefatigue.grid import cell_id, collect_results, fingerprint_index, plan_jobs, run_grid
from gazefatigue.ingest import index_sessions
from gazefatigue.synthetic import make_cohort

FAST = ["train.epochs=1", "train.batch_size=32"]


def _index(n=8, tasks=("PUR",), duration=20.0, seed=0):
    recs, metas = make_cohort(n, tasks=list(tasks), duration_s=duration, seed=seed)
    return index_sessions(recs, metas)


def _cfg(*extra):
    return load_config(None, FAST + list(extra))


@pytest.fixture(scope="module")
def pur_grid(tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    index = _index()
    cfg = _cfg("grid.tasks=['PUR']")
    calls = []
    results = run_grid(index, cfg, out, progress=lambda c, e: calls.append((c, e)))
    return out, index, cfg, results, calls


def test_restricted_grid_has_24_rows(pur_grid):
    out, _, cfg, results, calls = pur_grid
    assert len(results) == 24 and all(e is None for _, e in calls)
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24
    assert {(r["model"], int(r["window"])) for r in rows} == {
        (m, w) for m in ("EKYT", "FCN", "TCN", "MCDCNN", "TLENET", "INCEPTION") for w in (5, 10, 15, 20)}
    assert all(r["task"] == "PUR" and r["config_hash"] == config_hash(cfg) for r in rows)
    for r in rows:
        assert 0.0 <= float(r["accuracy"]) <= 1.0


def test_cell_files_and_manifest(pur_grid):
    out, index, cfg, _, _ = pur_grid
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(cfg)
    assert manifest["dataset"] == fingerprint_index(index)
    assert manifest["failed"] == {}
    cell = json.loads((out / manifest["completed"]["PUR/FCN/5"]).read_text())
    assert cell["resolved_config"]["train"]["epochs"] == 1
    assert len(cell["loss_curve"]) == 1
    assert cell["roc_points"][0] == [0.0, 0.0]


def test_no_participant_leakage(pur_grid):
    for d in pur_grid[3]:
        assert not set(d["train_participants"]) & set(d["test_participants"])
        assert d["n_test_participants"] == len(d["test_participants"]) == 2


def test_rerun_trains_nothing(pur_grid):
    out, index, cfg, results, _ = pur_grid
    before = (out / "results.csv").read_bytes()
    calls = []
    again = run_grid(index, cfg, out, progress=lambda c, e: calls.append(c))
    assert calls == [] and again == results
    assert (out / "results.csv").read_bytes() == before


def test_limit_and_resume(tmp_path):
    index = _index(duration=10.0)
    cfg = _cfg("grid.tasks=['PUR']", "grid.models=['FCN', 'TCN']", "grid.windows=[5, 10]")
    first = []
    run_grid(index, cfg, tmp_path, limit=3, progress=lambda c, e: first.append(c))
    assert len(first) == 3
    rest = []
    results = run_grid(index, cfg, tmp_path, progress=lambda c, e: rest.append(c))
    assert len(rest) == 1 and not set(rest) & set(first)
    assert len(results) == 4
    # a wider selection under the same hash reuses finished cells
    wider = _cfg("grid.tasks=['PUR']", "grid.models=['FCN', 'TCN', 'TLENET']", "grid.windows=[5, 10]")
    more = []
    run_grid(index, wider, tmp_path, progress=lambda c, e: more.append(c))
    assert sorted(more) == ["PUR/TLENET/10", "PUR/TLENET/5"]


def test_config_change_starts_over(tmp_path):
    index = _index(duration=10.0)
    sel = ["grid.tasks=['PUR']", "grid.models=['FCN']", "grid.windows=[5]"]
    run_grid(index, _cfg(*sel), tmp_path)
    calls = []
    run_grid(index, _cfg(*sel, "train.seed=5"), tmp_path, progress=lambda c, e: calls.append(c))
    assert calls == ["PUR/FCN/5"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(_cfg(*sel, "train.seed=5"))


def test_failures_are_recorded_and_others_continue(tmp_path):
    recs, metas = make_cohort(8, tasks=["PUR", "VRG"], duration_s=10.0, seed=1)
    # VRG keeps only three participants, too few to split
    keep = {m.participant_id for m in metas[:3]}
    recs = [r for r in recs if r.task.value == "PUR" or r.participant_id in keep]
    index = index_sessions(recs, metas)
    cfg = _cfg("grid.tasks=['PUR', 'VRG']", "grid.models=['FCN']", "grid.windows=[5]")
    calls = {}
    results = run_grid(index, cfg, tmp_path, progress=lambda c, e: calls.update({c: e}))
    assert calls["PUR/FCN/5"] is None
    assert "TooFewParticipants" in calls["VRG/FCN/5"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert list(manifest["failed"]) == ["VRG/FCN/5"]
    assert [d["task"] for d in results] == ["PUR"]


def test_normalizer_uses_training_windows_only():
    index = _index(duration=10.0)
    cfg = _cfg("grid.tasks=['PUR']", "grid.models=['FCN']", "grid.windows=[5]")
    [(cid, job)] = list(plan_jobs(index, cfg))
    assert cid == cell_id("PUR", "FCN", 5)
    mean = job.x_train.mean(axis=(0, 2))
    std = job.x_train.std(axis=(0, 2))
    assert np.allclose(mean, 0, atol=1e-9) and np.allclose(std, 1, atol=1e-6)
    assert not np.allclose(job.x_test.mean(axis=(0, 2)), 0, atol=1e-9)
    assert set(job.test_pids) == set(job.test_ids)


def test_parallel_workers_match_serial(tmp_path):
    index = _index(duration=10.0)
    cfg = _cfg("grid.tasks=['PUR']", "grid.models=['FCN', 'TCN']", "grid.windows=[5]")
    a = run_grid(index, cfg, tmp_path / "a", workers=1)
    b = run_grid(index, cfg, tmp_path / "b", workers=2)
    assert [(d["model"], d["accuracy"], d["auc"]) for d in a] == \
        [(d["model"], d["accuracy"], d["auc"]) for d in b]


def test_collect_results_empty(tmp_path):
    assert collect_results(tmp_path) == []
