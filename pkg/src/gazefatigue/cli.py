"""Command-line entry point: ``gazefatigue <command> [options]``.

Exit codes: 0 success, 1 fatal error, 2 partial success (some files or
grid cells failed).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from gazefatigue import __version__
from gazefatigue import config as cfgmod
from gazefatigue.errors import GazeFatigueError

log = logging.getLogger("gazefatigue")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class Fatal(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. train.epochs=20 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazefatigue",
                                     description="Visual-fatigue detection from VR eye-gaze data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse recordings and metadata, write window caches")
    _common(p)
    p.add_argument("--data-dir")
    p.add_argument("--metadata")
    p.add_argument("--out", help="cache directory (default: data.cache_dir)")

    p = sub.add_parser("windows", help="cut windows for one task and duration")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--out", help="cache file (default: <cache_dir>/windows_<TASK>_<W>.gzw)")

    p = sub.add_parser("train", help="train and evaluate one grid cell")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--out", help="output directory (default: data.results_dir)")

    p = sub.add_parser("grid", help="run the task x model x window grid (resumable)")
    _common(p)
    p.add_argument("--out", help="results directory (default: data.results_dir)")
    p.add_argument("--limit", type=int, help="train at most this many cells")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("stats", help="gaze-variance and subjective-rating t-tests")
    _common(p)
    p.add_argument("--out", help="output directory (default: <results_dir>/stats)")

    p = sub.add_parser("report", help="render accuracy tables and ROC point files")
    _common(p)
    p.add_argument("--results", help="results directory (default: data.results_dir)")
    p.add_argument("--out", help="report directory (default: <results>/report)")
    p.add_argument("--no-reference", action="store_true", help="omit published values")

    p = sub.add_parser("synth", help="write a synthetic cohort in the dataset layout")
    p.add_argument("--out", required=True)
    p.add_argument("--participants", type=int, default=40)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tasks", default="VRG,PUR,VID,TEX,RAN")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_cfg(args) -> dict:
    try:
        cfg = cfgmod.load_config(args.config, args.overrides)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise Fatal(f"bad configuration: {exc}") from exc
    for key, attr in (("data_dir", "data_dir"), ("metadata", "metadata")):
        if getattr(args, attr, None):
            cfg["data"][key] = getattr(args, attr)
    return cfg


def _load_data(cfg: dict):
    """(index, parse reports, metas) from the configured data paths."""
    from gazefatigue.ingest import index_sessions, load_metadata, parse_directory
    data_dir = Path(cfg["data"]["data_dir"])
    if not data_dir.is_dir():
        raise Fatal(f"data directory not found: {data_dir}")
    recordings, reports = parse_directory(data_dir, cfgmod.recording_schema(cfg),
                                          workers=int(cfg["grid"].get("workers", 1)))
    if not reports:
        raise Fatal(f"no recordings found in {data_dir}")
    meta_path = Path(cfg["data"]["metadata"])
    if not meta_path.is_file():
        raise Fatal(f"metadata file not found: {meta_path}")
    metas = load_metadata(meta_path, cfgmod.metadata_schema(cfg))
    return index_sessions(recordings, metas), reports, metas


def _windows_for(index, task, duration, ccfg):
    from gazefatigue.preprocess import make_windows, repair_gaps
    out = []
    for entry in index.by_task(task):
        if entry.meta is None or entry.meta.fatigue_label is None:
            continue
        out += make_windows(repair_gaps(entry.recording, ccfg), entry.meta, duration, ccfg)
    return out


def cmd_ingest(args) -> int:
    from gazefatigue.ingest import metadata_summary, write_parse_report
    from gazefatigue.preprocess import save_windows
    cfg = _load_cfg(args)
    index, reports, metas = _load_data(cfg)
    out = Path(args.out or cfg["data"]["cache_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_parse_report(reports, out / "parse_report.jsonl")
    metadata_summary(metas).to_csv(out / "metadata_summary.csv", float_format="%.4f",
                                   lineterminator="\n")
    ccfg = cfgmod.channel_config(cfg)
    chash = cfgmod.config_hash(cfg)
    for task in sorted(index.tasks, key=lambda t: t.value):
        for w in cfg["grid"]["windows"]:
            wins = _windows_for(index, task, w, ccfg)
            save_windows(wins, out / f"windows_{task.value}_{w}.gzw", chash, ccfg)
    failed = [r for r in reports if r.errors]
    for r in failed:
        log.error("%s: %s", r.path, "; ".join(r.errors))
    print(f"parsed {len(reports) - len(failed)}/{len(reports)} recordings, "
          f"{len(metas)} labelled participants; cache in {out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_windows(args) -> int:
    from gazefatigue.ingest import Task
    from gazefatigue.preprocess import save_windows
    cfg = _load_cfg(args)
    index, _, _ = _load_data(cfg)
    ccfg = cfgmod.channel_config(cfg)
    task = Task(args.task)
    wins = _windows_for(index, task, args.window, ccfg)
    path = Path(args.out or Path(cfg["data"]["cache_dir"]) / f"windows_{task.value}_{args.window}.gzw")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_windows(wins, path, cfgmod.config_hash(cfg), ccfg)
    n_fat = sum(w.label for w in wins)
    print(f"{len(wins)} windows ({n_fat} fatigue, {len(wins) - n_fat} no fatigue) -> {path}")
    return EXIT_OK


def _restrict(cfg: dict, task, model, window) -> dict:
    cfg = json.loads(json.dumps(cfg))
    cfg["grid"].update(tasks=[task], models=[model], windows=[window])
    return cfg


def cmd_train(args) -> int:
    from gazefatigue.grid import cell_id, plan_jobs, train_cell
    from gazefatigue.nn import checkpoint
    cfg = _restrict(_load_cfg(args), args.task.upper(), args.model.upper(), args.window)
    try:
        cfgmod.validate(cfg)
    except ValueError as exc:
        raise Fatal(str(exc)) from exc
    index, _, _ = _load_data(cfg)
    [(cid, job)] = list(plan_jobs(index, cfg))
    if isinstance(job, Exception):
        raise job
    model, result = train_cell(job)
    result["resolved_config"] = cfg
    out = Path(args.out or cfg["data"]["results_dir"])
    out.mkdir(parents=True, exist_ok=True)
    stem = cid.replace("/", "_")
    (out / f"{stem}.json").write_text(json.dumps(result, indent=1, sort_keys=True), encoding="utf-8")
    checkpoint.save(model, out / f"{stem}.ckpt.json", cfgmod.config_hash(cfg))
    print(f"{cell_id(job.task, job.model, job.window)}: accuracy {result['accuracy']:.3f} "
          f"auc {result['auc']:.3f} (train {result['train_accuracy']:.3f})")
    return EXIT_OK


def cmd_grid(args) -> int:
    from gazefatigue.grid import run_grid
    cfg = _load_cfg(args)
    index, _, _ = _load_data(cfg)
    out = Path(args.out or cfg["data"]["results_dir"])
    failures = []

    def progress(cid, error):
        if error:
            failures.append(cid)
        print(f"{cid}: {'FAILED ' + error if error else 'done'}", flush=True)

    results = run_grid(index, cfg, out, limit=args.limit, workers=args.workers, progress=progress)
    print(f"{len(results)} completed cells in {out / 'results.csv'}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_stats(args) -> int:
    from gazefatigue import stats
    cfg = _load_cfg(args)
    index, _, metas = _load_data(cfg)
    out = Path(args.out or Path(cfg["data"]["results_dir"]) / "stats")
    out.mkdir(parents=True, exist_ok=True)
    equal_var = bool(cfg["stats"].get("equal_var", False))
    battery = stats.variance_battery(index, equal_var=equal_var)
    battery.to_csv(out / "variance_tests.csv", index=False, lineterminator="\n")
    stats.subjective_battery(metas, equal_var=equal_var).to_csv(
        out / "subjective_tests.csv", index=False, lineterminator="\n")
    for signal in stats.Signal:
        for eye in stats.Eye:
            series = stats.variance_timeseries(index, signal, eye)
            series.to_csv(out / f"variance_over_time_{signal.value.lower()}_{eye.value.lower()}.csv",
                          index=False, lineterminator="\n")
    print(f"statistics written to {out}")
    return EXIT_PARTIAL if (battery["note"] != "").any() else EXIT_OK


def cmd_report(args) -> int:
    from gazefatigue.report import write_report
    cfg = _load_cfg(args)
    results = Path(args.results or cfg["data"]["results_dir"])
    if not (results / "manifest.json").exists():
        raise Fatal(f"no grid results in {results}")
    rep = write_report(results, args.out, with_reference=not args.no_reference)
    for w in rep["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"report written to {Path(args.out) if args.out else results / 'report'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from gazefatigue.synthetic import make_cohort, write_cohort
    recs, metas = make_cohort(args.participants, tasks=args.tasks.split(","),
                              duration_s=args.duration, seed=args.seed)
    write_cohort(args.out, recs, metas)
    print(f"{len(recs)} recordings for {len(metas)} participants in {args.out}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "windows": cmd_windows, "train": cmd_train, "grid": cmd_grid,
            "stats": cmd_stats, "report": cmd_report, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Fatal as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (GazeFatigueError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
