"""Render grid results as per-task accuracy tables and ROC point files."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from gazefatigue.grid import collect_results
from gazefatigue.ingest import TASKS
from gazefatigue.preprocess import WINDOW_DURATIONS

log = logging.getLogger(__name__)

# row order of the published tables
MODEL_ROWS = ("EKYT", "FCN", "TCN", "MCDCNN", "TLENET", "INCEPTION")

# Published window-level accuracies, reference only (never asserted).
# Columns are the 5, 10, 15 and 20 s windows.
PAPER_ACCURACY = {
    "PUR": {"EKYT": (0.734, 0.945, 0.814, 0.673), "FCN": (0.749, 0.804, 0.648, 0.802),
            "TCN": (0.562, 0.758, 0.658, 0.728), "MCDCNN": (0.653, 0.779, 0.899, 0.919),
            "TLENET": (0.704, 0.749, 0.864, 0.834), "INCEPTION": (0.583, 0.603, 0.719, 0.588)},
    "RAN": {"EKYT": (0.744, 0.683, 0.915, 0.844), "FCN": (0.563, 0.593, 0.588, 0.884),
            "TCN": (0.643, 0.568, 0.603, 0.653), "MCDCNN": (0.553, 0.724, 0.905, 0.558),
            "TLENET": (0.655, 0.542, 0.688, 0.601), "INCEPTION": (0.633, 0.588, 0.562, 0.583)},
    "TEX": {"EKYT": (0.558, 0.618, 0.694, 0.603), "FCN": (0.719, 0.708, 0.854, 0.895),
            "TCN": (0.673, 0.589, 0.608, 0.623), "MCDCNN": (0.587, 0.788, 0.698, 0.904),
            "TLENET": (0.562, 0.910, 0.643, 0.859), "INCEPTION": (0.683, 0.578, 0.603, 0.598)},
    "VID": {"EKYT": (0.598, 0.583, 0.608, 0.538), "FCN": (0.578, 0.929, 0.774, 0.915),
            "TCN": (0.573, 0.729, 0.824, 0.553), "MCDCNN": (0.673, 0.618, 0.769, 0.930),
            "TLENET": (0.543, 0.914, 0.895, 0.935), "INCEPTION": (0.582, 0.653, 0.613, 0.578)},
    "VRG": {"EKYT": (0.824, 0.809, 0.835, 0.784), "FCN": (0.608, 0.809, 0.925, 0.658),
            "TCN": (0.563, 0.729, 0.638, 0.658), "MCDCNN": (0.788, 0.901, 0.915, 0.699),
            "TLENET": (0.774, 0.945, 0.869, 0.909), "INCEPTION": (0.513, 0.603, 0.563, 0.577)},
}

# Published demographics: category -> (count, age mean, age std, hours slept mean, std)
PAPER_DEMOGRAPHICS = {
    "all": (407, 20.96, 4.14, 7.05, 1.48),
    "female": (216, 20.12, 2.80, 6.93, 1.49),
    "male": (188, 21.73, 5.17, 7.16, 1.42),
    "no_fatigue": (177, 21.18, 4.55, 7.32, 1.42),
    "fatigue": (230, 20.62, 3.78, 6.83, 1.49),
}


def accuracy_tables(results: list[dict], metric: str = "accuracy") -> tuple[dict, list[str]]:
    """One 6x4 DataFrame per task (rows models, columns window seconds).

    Missing cells stay NaN and each produces one warning string.
    """
    tables, warnings = {}, []
    by_key = {(d["task"], d["model"], int(d["duration_s"])): d for d in results}
    for task in TASKS:
        t = task.value
        frame = pd.DataFrame(np.nan, index=list(MODEL_ROWS), columns=list(WINDOW_DURATIONS))
        for m in MODEL_ROWS:
            for w in WINDOW_DURATIONS:
                d = by_key.get((t, m, w))
                if d is None:
                    warnings.append(f"missing cell {t}/{m}/{w}")
                else:
                    frame.loc[m, w] = d[metric]
        frame.index.name = "model"
        tables[t] = frame
    return tables, warnings


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.3f}"


def render_markdown(task: str, table: pd.DataFrame, reference: dict | None = None,
                    metric: str = "accuracy") -> str:
    """Markdown table; with ``reference`` each cell reads ``ours (paper)``."""
    head = "| Model | " + " | ".join(f"{w} s" for w in table.columns) + " |"
    lines = [f"### {task} {metric}", "", head, "|" + "---|" * (len(table.columns) + 1)]
    for model, row in table.iterrows():
        cells = []
        for i, w in enumerate(table.columns):
            cell = _fmt(row[w])
            if reference is not None and model in reference:
                cell = f"{cell} ({reference[model][i]:.3f})".strip()
            cells.append(cell)
        lines.append(f"| {model} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_roc_files(results: list[dict], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for d in results:
        path = out / f"{d['task']}_{d['model']}_{d['duration_s']}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr"])
            w.writerows((repr(float(a)), repr(float(b))) for a, b in d["roc_points"])
        paths.append(path)
    return paths


def write_report(results_dir, out_dir=None, with_reference: bool = True) -> dict:
    """Write accuracy and AUC tables (Markdown + CSV) and ROC point files.

    Returns ``{"tables": {task: DataFrame}, "warnings": [...], "files": [...]}``.
    """
    results_dir = Path(results_dir)
    out = Path(out_dir) if out_dir is not None else results_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    results = collect_results(results_dir)
    tables, warnings = accuracy_tables(results)
    auc_tables, _ = accuracy_tables(results, "auc")
    for w in warnings:
        log.warning(w)
    files = []
    md = ["# Window-level accuracy", ""]
    if with_reference:
        md += ["Cells read `ours (published)`; published values are for comparison only.", ""]
    for task, table in tables.items():
        ref = PAPER_ACCURACY.get(task) if with_reference else None
        md.append(render_markdown(task, table, ref))
        md.append(render_markdown(task, auc_tables[task], metric="AUC"))
        for name, frame in ((f"accuracy_{task}.csv", table), (f"auc_{task}.csv", auc_tables[task])):
            frame.to_csv(out / name, float_format="%.6f", lineterminator="\n")
            files.append(out / name)
    if warnings:
        md += ["## Warnings", ""] + [f"- {w}" for w in warnings] + [""]
    (out / "report.md").write_text("\n".join(md), encoding="utf-8")
    files.append(out / "report.md")
    files += write_roc_files(results, out / "roc")
    return {"tables": tables, "auc_tables": auc_tables, "warnings": warnings, "files": files}


def demographics_comparison(summary: pd.DataFrame) -> pd.DataFrame:
    """Side-by-side of a metadata summary and the published demographics table."""
    rows = []
    for cat, (count, age_m, age_s, hs_m, hs_s) in PAPER_DEMOGRAPHICS.items():
        ours = summary.loc[cat] if cat in summary.index else None
        get = (lambda k: float(ours[k])) if ours is not None else (lambda k: float("nan"))
        rows.append({"category": cat, "count": get("count"), "count_paper": count,
                     "age_mean": get("age_mean"), "age_mean_paper": age_m,
                     "age_std": get("age_std"), "age_std_paper": age_s,
                     "hours_slept_mean": get("hours_slept_mean"), "hours_slept_mean_paper": hs_m,
                     "hours_slept_std": get("hours_slept_std"), "hours_slept_std_paper": hs_s})
    return pd.DataFrame(rows).set_index("category")
