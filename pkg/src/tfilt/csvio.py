"""CSV writers and a reader for every file the command line emits.

All files start with ``#`` comment lines (the run configuration as JSON),
followed by a header row. Floats are written with ``repr`` so that output
is byte-identical across runs and parses back exactly.

Schemas
    trajectory (scalar)  k, x, y
    trajectory (drone)   k, px, py, vx, vy, yx, yy, maneuver_flag, outlier_flag
    estimates            pass, k, xhat_<i>..., P_<i>_<j>..., eta, yhat_<i>...,
                         innovation_<i>..., S_<i>_<j>..., d_factor, scale_factor
    density              pass, k, x, pdf
    errors               run, filter, rmse
    kde                  filter, x, density
    step errors          run, filter, k, error
    summary              filter, runs, median_rmse, mean_rmse
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def config_comment(config: Optional[dict]) -> list[str]:
    if not config:
        return []
    return ["config: " + json.dumps(config, sort_keys=True, default=str)]


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence],
               comments: Sequence[str] = ()) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_rows(path) -> tuple[list[str], list[dict]]:
    """Returns (comment lines, rows as dicts of strings)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return comments, list(csv.DictReader(body))


def read_config(path) -> Optional[dict]:
    comments, _ = read_rows(path)
    for c in comments:
        if c.startswith("config: "):
            return json.loads(c[len("config: "):])
    return None


def write_scalar_trajectory(path, states, measurements, comments=()) -> None:
    rows = [(k, x, None if k == 0 else measurements[k - 1])
            for k, x in enumerate(states)]
    write_rows(path, ("k", "x", "y"), rows, comments)


def write_drone_trajectory(path, traj, comments=()) -> None:
    rows = []
    for k in range(traj.states.shape[0]):
        rows.append((k, *traj.states[k], *traj.measurements[k],
                     traj.maneuver[k], traj.outlier[k]))
    write_rows(path, ("k", "px", "py", "vx", "vy", "yx", "yy",
                      "maneuver_flag", "outlier_flag"), rows, comments)


def estimate_header(n: int, m: int) -> list[str]:
    cols = ["pass", "k"] + [f"xhat_{i}" for i in range(n)]
    cols += [f"P_{i}_{j}" for i in range(n) for j in range(n)]
    cols += ["eta"] + [f"yhat_{i}" for i in range(m)]
    cols += [f"innovation_{i}" for i in range(m)]
    cols += [f"S_{i}_{j}" for i in range(m) for j in range(m)]
    return cols + ["d_factor", "scale_factor"]


def estimate_rows(label: str, beliefs: Sequence, m: int, diags=None,
                  k0: int = 0) -> list[tuple]:
    """Rows from objects with ``xhat``, ``P`` and optionally ``eta``.

    ``diags[i]`` may hold measurement diagnostics of step i (None for the
    prior); their fields fill the yhat, innovation, S, d_factor and
    scale_factor columns, which stay empty otherwise.
    """
    rows = []
    blank = (None,) * (2 * m + m * m + 2)
    for i, b in enumerate(beliefs):
        row = (label, k0 + i, *np.ravel(b.xhat), *np.ravel(b.P), getattr(b, "eta", None))
        dg = None if diags is None else diags[i]
        if dg is None:
            row += blank
        else:
            row += (*np.ravel(dg.yhat), *np.ravel(dg.innovation), *np.ravel(dg.S),
                    getattr(dg, "d_factor", None), getattr(dg, "c_P", None))
        rows.append(row)
    return rows


def write_estimates(path, n: int, m: int, rows, comments=()) -> None:
    write_rows(path, estimate_header(n, m), rows, comments)


def read_estimates(path) -> dict:
    """{pass: (k array, xhat array (K, n), P array (K, n, n))}."""
    _, rows = read_rows(path)
    out = {}
    if not rows:
        return out
    n = sum(1 for c in rows[0] if c.startswith("xhat_"))
    for lab in dict.fromkeys(r["pass"] for r in rows):
        sel = [r for r in rows if r["pass"] == lab]
        ks = np.array([int(r["k"]) for r in sel])
        xs = np.array([[float(r[f"xhat_{i}"]) for i in range(n)] for r in sel])
        Ps = np.array([[[float(r[f"P_{i}_{j}"]) for j in range(n)] for i in range(n)]
                       for r in sel])
        out[lab] = (ks, xs, Ps)
    return out


def write_density_dump(path, run, comments=()) -> None:
    rows = []
    for lab, seq in (("prediction", run.predicted), ("filtering", run.filtered),
                     ("smoothing", run.smoothed)):
        for k, d in enumerate(seq):
            if d is None:
                continue
            rows.extend((lab, k, x, p) for x, p in zip(d.x, d.pdf))
    write_rows(path, ("pass", "k", "x", "pdf"), rows, comments)
