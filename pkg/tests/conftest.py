import os
import sys
from pathlib import Path

import numpy as np
import pytest

# single-threaded BLAS keeps batch results bitwise stable
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_csv(path, t, cols: dict):
    header = ["n"] + list(cols)
    lines = [",".join(header)]
    for i, ti in enumerate(t):
        row = [repr(float(ti))]
        for v in cols.values():
            x = v[i]
            row.append("" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x)))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def angle_cols(n, rng, value=None):
    return {r: (np.full(n, value) if value is not None else rng.uniform(-20, 20, n))
            for r in ("x", "y", "lx", "ly", "rx", "ry")}
