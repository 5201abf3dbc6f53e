"""Analysis-ready CSV tables from a run directory.

``parcoords.csv`` has one row per point: ``f_1 .. f_m, tag``.
``pairs.csv`` is the long form of a scatter-plot matrix: one row per point
and objective pair ``i < j`` with columns ``obj_i, obj_j, value_i, value_j,
tag``. Evaluated points are tagged ``initial`` or ``added`` when
nondominated and ``dominated`` otherwise; the reported solution adds one row
tagged ``ks``, ``nash`` or ``nks`` (an NKS result also adds its Nash
disagreement point as a ``nash`` row).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .loop import read_log
from .pareto import nondominated_mask

TAGS = ("initial", "added", "dominated", "nash", "ks", "nks")
_KIND_TAG = {"ks": "ks", "efficient-maxmin": "ks", "nash": "nash", "nks": "nks"}


def _num(v) -> str:
    return format(float(v), ".17g")


def tagged_points(run_dir):
    """``(values, tags)`` for every evaluated point and solution row."""
    run_dir = Path(run_dir)
    iterations, _, Y = read_log(run_dir / "log.csv")
    keep = nondominated_mask(Y) if len(Y) else np.zeros(0, dtype=bool)
    tags = [("initial" if it == 0 else "added") if nd else "dominated" for it, nd in zip(iterations, keep)]
    values = [row for row in Y]
    summary_path = run_dir / "result.json"
    if summary_path.exists():
        try:
            summary = json.loads(summary_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{summary_path} is not valid JSON: {exc}") from exc
        result = summary.get("result")
        if result:
            nash = result.get("diagnostics", {}).get("nash")
            if nash:
                values.append(np.asarray(nash["objectives"], dtype=float))
                tags.append("nash")
            values.append(np.asarray(result["objectives"], dtype=float))
            tags.append(_KIND_TAG[result["kind"]])
    m = Y.shape[1]
    return np.array(values, dtype=float).reshape(-1, m), tags


def write_report(run_dir, output_dir=None):
    """Write ``pairs.csv`` and ``parcoords.csv``; returns their paths."""
    run_dir = Path(run_dir)
    out = Path(output_dir) if output_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    values, tags = tagged_points(run_dir)
    m = values.shape[1]
    par = out / "parcoords.csv"
    with open(par, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f_{j + 1}" for j in range(m)] + ["tag"])
        for v, t in zip(values, tags):
            w.writerow([_num(x) for x in v] + [t])
    pairs = out / "pairs.csv"
    with open(pairs, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obj_i", "obj_j", "value_i", "value_j", "tag"])
        for v, t in zip(values, tags):
            for i in range(m):
                for j in range(i + 1, m):
                    w.writerow([i + 1, j + 1, _num(v[i]), _num(v[j]), t])
    return pairs, par
