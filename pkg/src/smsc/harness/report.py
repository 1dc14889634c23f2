"""CSV results and plot-ready per-task series."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .sweep import ResultRow

CSV_FIELDS = ("seed", "snr_db", "method", "mode", "budget", "rank1", "color_acc", "type_acc", "deep_fades")
SERIES_FIELDS = ("snr_db", "method", "mode", "mean", "stderr", "n")
TASK_METRICS = {"rank1": "rank1", "color": "color_acc", "type": "type_acc"}


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4f}"
    return str(value)


def emit_csv(rows, path) -> Path:
    rows = sorted(rows, key=ResultRow.sort_key)
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, f)) for f in CSV_FIELDS])
    return path


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            ResultRow(
                seed=int(r["seed"]), snr_db=float(r["snr_db"]), method=r["method"], mode=r["mode"],
                budget=int(r["budget"]), rank1=float(r["rank1"]), color_acc=float(r["color_acc"]),
                type_acc=float(r["type_acc"]), deep_fades=int(r["deep_fades"]),
            )
            for r in reader
        ]


def aggregate(rows, metric: str) -> list[tuple[float, str, str, float, float, int]]:
    """(snr, method, mode, mean, standard error, n) over seeds; failed (NaN) rows are skipped."""
    groups: dict[tuple[float, str, str], list[float]] = defaultdict(list)
    for row in rows:
        value = getattr(row, metric)
        if not math.isnan(value):
            groups[(row.snr_db, row.method, row.mode)].append(value)
    out = []
    for (snr, method, mode), values in sorted(groups.items(), key=lambda kv: (kv[0][2], kv[0][1], kv[0][0])):
        v = np.asarray(values)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append((snr, method, mode, float(v.mean()), se, len(v)))
    return out


def emit_plot_series(rows, directory) -> list[Path]:
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to aggregate")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for task, metric in TASK_METRICS.items():
        path = directory / f"series_{task}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SERIES_FIELDS)
            for snr, method, mode, mean, se, n in aggregate(rows, metric):
                writer.writerow([f"{snr:.4f}", method, mode, f"{mean:.6f}", f"{se:.6f}", n])
        paths.append(path)
    return paths
