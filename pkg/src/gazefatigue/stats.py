"""Gaze-variance and subjective-rating statistics with self-contained t-tests."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from gazefatigue.errors import DegenerateTest, LengthMismatch, MissingSignal
from gazefatigue.ingest import TASKS, Recording, SessionIndex, SessionMeta

log = logging.getLogger(__name__)


# --- Student t distribution -------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float, xc: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``xc`` may pass 1 - x computed without cancellation.
    """
    xc = 1.0 - x if xc is None else xc
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(xc))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, xc) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isnan(t) or math.isnan(df):
        return float("nan")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2)))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


# --- t-tests ----------------------------------------------------------------------

class TestKind(str, enum.Enum):
    PAIRED_T = "PAIRED_T"
    TWO_SAMPLE_T = "TWO_SAMPLE_T"
    ONE_SAMPLE_T = "ONE_SAMPLE_T"


@dataclass(frozen=True)
class StatResult:
    kind: TestKind
    t: float
    p: float
    df: float
    n: tuple
    equal_var: bool | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["n"] = list(self.n)
        return d


def _clean(a) -> np.ndarray:
    return np.asarray(a, dtype=float).ravel()


def one_sample_t(a: Sequence[float], mu: float = 0.0) -> StatResult:
    a = _clean(a)
    n = len(a)
    if n < 2:
        raise DegenerateTest("need at least 2 observations")
    sd = a.std(ddof=1)
    if sd == 0:
        raise DegenerateTest("zero variance")
    t = (a.mean() - mu) / (sd / math.sqrt(n))
    return StatResult(TestKind.ONE_SAMPLE_T, float(t), t_sf_two_sided(float(t), n - 1), n - 1, (n,))


def paired_t(a: Sequence[float], b: Sequence[float]) -> StatResult:
    """Paired t-test on a - b (two-sided)."""
    a, b = _clean(a), _clean(b)
    if len(a) != len(b):
        raise LengthMismatch(f"paired samples differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise DegenerateTest("need at least 2 pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise DegenerateTest("differences have zero variance")
    n = len(d)
    t = d.mean() / (sd / math.sqrt(n))
    return StatResult(TestKind.PAIRED_T, float(t), t_sf_two_sided(float(t), n - 1), n - 1, (n, n))


def two_sample_t(a: Sequence[float], b: Sequence[float], equal_var: bool = False) -> StatResult:
    """Welch's t-test by default; ``equal_var=True`` gives Student's pooled form."""
    a, b = _clean(a), _clean(b)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise DegenerateTest("each group needs at least 2 observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        raise DegenerateTest("both groups have zero variance")
    diff = a.mean() - b.mean()
    if equal_var:
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))
    t = diff / se
    return StatResult(TestKind.TWO_SAMPLE_T, float(t), t_sf_two_sided(float(t), df), float(df),
                      (na, nb), equal_var)


# --- gaze variance ------------------------------------------------------------------

class Signal(str, enum.Enum):
    POSITION = "POSITION"
    ORIENTATION = "ORIENTATION"


class Eye(str, enum.Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"


def _components(rec: Recording, signal, eye) -> np.ndarray:
    signal, eye = Signal(signal), Eye(eye)
    if signal == Signal.ORIENTATION:
        roles = ("lx", "ly") if eye == Eye.LEFT else ("rx", "ry")
        return np.stack([getattr(rec, r) for r in roles], axis=1)
    pos = rec.pos_l if eye == Eye.LEFT else rec.pos_r
    if pos is None:
        raise MissingSignal(f"{rec.participant_id}/{rec.task.value}: no {eye.value.lower()}-eye position")
    return np.asarray(pos)


def _sample_variance_sum(comp: np.ndarray) -> float:
    total = 0.0
    for j in range(comp.shape[1]):
        col = comp[:, j]
        col = col[~np.isnan(col)]
        if len(col) < 2:
            raise MissingSignal("fewer than two valid samples")
        total += float(np.sum((col - col.mean()) ** 2) / (len(col) - 1))
    return total


def gaze_variance(rec: Recording, signal, eye) -> float:
    """Sum of the sample variances (n-1) of the signal's components over the recording.

    Orientation uses the eye's two angle channels (dva^2); position uses its
    three position components.  Missing samples are skipped per component.
    """
    return _sample_variance_sum(_components(rec, signal, eye))


def sliding_variance(rec: Recording, signal, eye, window_s: float = 1.0,
                     stride_s: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """(window start in s, variance) series for variance-over-time plots."""
    comp = _components(rec, signal, eye)
    n = int(round(window_s * rec.sample_rate_hz))
    step = int(round(stride_s * rec.sample_rate_hz))
    starts, values = [], []
    for lo in range(0, len(comp) - n + 1, step):
        try:
            values.append(_sample_variance_sum(comp[lo:lo + n]))
        except MissingSignal:
            values.append(float("nan"))
        starts.append(lo / rec.sample_rate_hz)
    return np.array(starts), np.array(values)


@dataclass(frozen=True)
class VarianceSummary:
    task: str
    eye: Eye
    signal: Signal
    fatigue: dict       # participant_id -> variance
    no_fatigue: dict


def variance_summaries(index: SessionIndex) -> list[VarianceSummary]:
    """Per-participant variances for every (task, eye, signal); repeated recordings are averaged."""
    out = []
    for task in TASKS:
        for eye in Eye:
            for signal in Signal:
                groups = {True: {}, False: {}}
                for entry in index.by_task(task):
                    if entry.meta is None or entry.meta.fatigue_label is None:
                        continue
                    try:
                        v = gaze_variance(entry.recording, signal, eye)
                    except MissingSignal:
                        continue
                    groups[entry.meta.fatigue_label].setdefault(entry.recording.participant_id, []).append(v)
                mean = {k: {p: float(np.mean(v)) for p, v in g.items()} for k, g in groups.items()}
                out.append(VarianceSummary(task.value, eye, signal, mean[True], mean[False]))
    return out


def variance_battery(index: SessionIndex, equal_var: bool = False) -> pd.DataFrame:
    """Fatigue vs no-fatigue comparison for each (task, eye, signal): 20 rows.

    Emits the Welch test and Student's pooled test side by side.  Cells that
    cannot be tested keep NaN statistics and say why in ``note``.
    """
    rows = []
    for s in variance_summaries(index):
        fat, nof = list(s.fatigue.values()), list(s.no_fatigue.values())
        row = {"task": s.task, "eye": s.eye.value, "signal": s.signal.value,
               "n_fatigue": len(fat), "n_no_fatigue": len(nof),
               "mean_fatigue": float(np.mean(fat)) if fat else float("nan"),
               "mean_no_fatigue": float(np.mean(nof)) if nof else float("nan"),
               "t": float("nan"), "p": float("nan"), "df": float("nan"),
               "t_pooled": float("nan"), "p_pooled": float("nan"), "note": ""}
        try:
            main = two_sample_t(fat, nof, equal_var=equal_var)
            alt = two_sample_t(fat, nof, equal_var=not equal_var)
            row.update(t=main.t, p=main.p, df=main.df)
            pooled = alt if not equal_var else main
            row.update(t_pooled=pooled.t, p_pooled=pooled.p)
        except DegenerateTest as exc:
            row["note"] = str(exc)
        rows.append(row)
    return pd.DataFrame(rows)


def variance_timeseries(index: SessionIndex, signal, eye, window_s: float = 1.0,
                        stride_s: float = 0.5) -> pd.DataFrame:
    """Long-form plot data: task, participant, group, time_s, variance."""
    frames = []
    for (pid, task), entries in sorted(index.entries.items()):
        for entry in entries:
            if entry.meta is None or entry.meta.fatigue_label is None:
                continue
            try:
                times, values = sliding_variance(entry.recording, signal, eye, window_s, stride_s)
            except MissingSignal:
                continue
            frames.append(pd.DataFrame({
                "task": task.value, "participant_id": pid,
                "group": "fatigue" if entry.meta.fatigue_label else "no_fatigue",
                "time_s": times, "variance": values}))
    cols = ["task", "participant_id", "group", "time_s", "variance"]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)


# --- subjective ratings ---------------------------------------------------------------

MEASURE_LABELS = {
    "sleepiness": "Sleepiness",
    "neck_fatigue": "Neck Fatigue",
    "physical_comfort": "Physical Comfort",
    "mental_effort": "Mental Effort",
    "physical_effort": "Physical Effort",
}


def _try(test, *args, **kwargs):
    try:
        r = test(*args, **kwargs)
        return r.t, r.p
    except DegenerateTest:
        return float("nan"), float("nan")


def subjective_battery(metas: Iterable[SessionMeta], equal_var: bool = False) -> pd.DataFrame:
    """Pre/post ratings table: two rows (No Fatigue, Fatigue) per measure.

    Uses participants with both a pre and a post value for the measure.
    Group tests are no-fatigue minus fatigue; paired tests are pre minus
    post; delta is post minus pre.  Shared statistics repeat on both rows of
    a measure.  Measures nobody rated are skipped with a warning.
    """
    metas = [m for m in metas if m.fatigue_label is not None]
    rows = []
    for measure, label in MEASURE_LABELS.items():
        data = {}
        for flag in (False, True):
            pairs = [m.rating(measure) for m in metas if m.fatigue_label is flag]
            pairs = np.array([p for p in pairs if None not in p], dtype=float).reshape(-1, 2)
            data[flag] = pairs
        if len(data[False]) == 0 and len(data[True]) == 0:
            log.warning("no ratings for %s; measure skipped", measure)
            continue
        nf, f = data[False], data[True]
        pre_t, pre_p = _try(two_sample_t, nf[:, 0], f[:, 0], equal_var=equal_var)
        post_t, post_p = _try(two_sample_t, nf[:, 1], f[:, 1], equal_var=equal_var)
        d_t, d_p = _try(two_sample_t, nf[:, 1] - nf[:, 0], f[:, 1] - f[:, 0], equal_var=equal_var)
        for flag, group in ((False, "No Fatigue"), (True, "Fatigue")):
            g = data[flag]
            paired = _try(paired_t, g[:, 0], g[:, 1])
            mean = g.mean(axis=0) if len(g) else np.array([np.nan, np.nan])
            rows.append({
                "measure": label, "group": group, "n": len(g),
                "pre_mean": mean[0], "post_mean": mean[1], "delta_mean": mean[1] - mean[0],
                "pre_group_t": pre_t, "pre_group_p": pre_p,
                "post_group_t": post_t, "post_group_p": post_p,
                "paired_t": paired[0], "paired_p": paired[1],
                "delta_group_t": d_t, "delta_group_p": d_p,
            })
    return pd.DataFrame(rows)
