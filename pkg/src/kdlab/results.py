"""Result persistence: run ids, atomic CSV/JSON writers, and plot-data
export. Floats are serialized via repr so identical runs produce identical
bytes on the same platform.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

COMPRESSION_CSV_HEADER = ["run_id", "variant", "width", "seed", "split", "metric", "value"]
INCREMENTAL_CSV_HEADER = ["run_id", "method", "task_seen", "task_eval", "seed", "accuracy"]
PLOT_CSV_HEADER = ["width", "variant", "rpr_mean", "rpr_std", "base"]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_id(config: dict, seed: int, code_version: str = "") -> str:
    """Short digest of (config, seed, code version); collisions are visible."""
    if not code_version:
        from . import __version__
        code_version = __version__
    blob = canonical_json({"config": config, "seed": seed, "version": code_version})
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv_atomic(path: str, header: list[str], rows: list[list]) -> None:
    """Write header+rows to a temp file and rename into place, so an
    interrupted run never leaves a partial CSV behind."""
    text = ",".join(header) + "\n"
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
        text += ",".join(_format_cell(v) for v in row) + "\n"
    _atomic_write(path, text)


def write_json_atomic(path: str, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def compression_rows(rid: str, variant: str, width: int, seed: int, result) -> list[list]:
    """Final-epoch metric rows in the fixed compression schema."""
    return [
        [rid, variant, width, seed, "train", "acc", result.train_acc[-1]],
        [rid, variant, width, seed, "train", "loss", result.train_loss[-1]],
        [rid, variant, width, seed, "test", "acc", result.test_acc[-1]],
        [rid, variant, width, seed, "test", "loss", result.test_loss[-1]],
    ]


def incremental_rows(rid: str, method: str, seed: int, acc_matrix: list[list[float]]) -> list[list]:
    """One row per (tasks seen so far, task evaluated); tasks are 1-based."""
    rows = []
    for t, row in enumerate(acc_matrix):
        for j, a in enumerate(row):
            rows.append([rid, method, t + 1, j + 1, seed, a])
    return rows


def export_plot_data(summary: list[dict], path: str) -> None:
    """Long-form CSV of seed-averaged RPR per (width, variant, base)."""
    rows = [[c["width"], c["variant"], c["rpr_mean"], c["rpr_std"], c["base"]]
            for c in summary]
    rows.sort(key=lambda r: (str(r[4]), str(r[1]), int(r[0])))
    write_csv_atomic(path, PLOT_CSV_HEADER, rows)
