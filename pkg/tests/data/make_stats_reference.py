"""Generate stats_reference.json: 20 fixed datasets with t-test results.

Run once; the JSON is committed.  Statistics are computed at 50 digits with
mpmath (closed-form t, incomplete-beta tail) and cross-checked against
scipy.stats.  Nothing from gazefatigue is imported here.
"""
import json
from pathlib import Path

import mpmath as mp
import numpy as np
from scipy import stats

mp.mp.dps = 50


def mean(xs):
    return mp.fsum(xs) / len(xs)


def var(xs):
    m = mean(xs)
    return mp.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1)


def two_sided_p(t, df):
    x = df / (df + t * t)
    return mp.betainc(df / 2, mp.mpf(1) / 2, 0, x, regularized=True)


def paired(a, b):
    d = [mp.mpf(x) - mp.mpf(y) for x, y in zip(a, b)]
    n = len(d)
    t = mean(d) / mp.sqrt(var(d) / n)
    return t, mp.mpf(n - 1)


def welch(a, b):
    a = [mp.mpf(x) for x in a]
    b = [mp.mpf(x) for x in b]
    qa, qb = var(a) / len(a), var(b) / len(b)
    t = (mean(a) - mean(b)) / mp.sqrt(qa + qb)
    df = (qa + qb) ** 2 / (qa ** 2 / (len(a) - 1) + qb ** 2 / (len(b) - 1))
    return t, df


def pooled(a, b):
    a = [mp.mpf(x) for x in a]
    b = [mp.mpf(x) for x in b]
    df = len(a) + len(b) - 2
    sp = ((len(a) - 1) * var(a) + (len(b) - 1) * var(b)) / df
    t = (mean(a) - mean(b)) / mp.sqrt(sp * (mp.mpf(1) / len(a) + mp.mpf(1) / len(b)))
    return t, mp.mpf(df)


def main():
    rng = np.random.default_rng(20240611)
    cases = []
    for i in range(10):
        n = int(rng.integers(4, 80))
        a = rng.normal(rng.uniform(-3, 3), rng.uniform(0.2, 4), n)
        b = a + rng.normal(rng.choice([0.0, 0.3, 2.5]), rng.uniform(0.1, 2), n)
        a, b = np.round(a, 6), np.round(b, 6)
        t, df = paired(a, b)
        ref = stats.ttest_rel(a, b)
        p = two_sided_p(t, df)
        assert abs(float(t) - ref.statistic) < 1e-9 * max(1, abs(ref.statistic))
        assert abs(float(p) - ref.pvalue) <= 1e-9 * max(ref.pvalue, 1e-300)
        cases.append({"kind": "paired", "a": a.tolist(), "b": b.tolist(),
                      "t": float(t), "p": float(p), "df": float(df)})
    for i in range(10):
        na, nb = int(rng.integers(3, 60)), int(rng.integers(3, 60))
        a = rng.normal(0.0, rng.uniform(0.3, 3), na)
        b = rng.normal(rng.choice([0.0, 0.5, 4.0]), rng.uniform(0.3, 3), nb)
        a, b = np.round(a, 6), np.round(b, 6)
        for equal_var, fn in ((False, welch), (True, pooled)):
            t, df = fn(a, b)
            ref = stats.ttest_ind(a, b, equal_var=equal_var)
            p = two_sided_p(t, df)
            assert abs(float(t) - ref.statistic) < 1e-9 * max(1, abs(ref.statistic))
            assert abs(float(p) - ref.pvalue) <= 1e-9 * max(ref.pvalue, 1e-300)
            cases.append({"kind": "pooled" if equal_var else "welch", "a": a.tolist(),
                          "b": b.tolist(), "t": float(t), "p": float(p), "df": float(df)})
    out = Path(__file__).with_name("stats_reference.json")
    out.write_text(json.dumps({"datasets": 20, "cases": cases}, indent=1) + "\n")
    print(f"wrote {len(cases)} reference results for 20 datasets to {out}")


if __name__ == "__main__":
    main()
