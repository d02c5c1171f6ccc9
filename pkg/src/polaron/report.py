"""Structured records, CSV tables and the PNG figure rendered beside each table.

Every record is one JSON object per line and carries ``kind``,
``config_hash`` and ``version``.  Every CSV written through ``write_table``
gets a PNG with the same stem in the same directory.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def record(kind: str, payload: dict, config_hash: str | None = None) -> dict:
    out = {"kind": kind, "config_hash": config_hash, "version": __version__}
    out.update(_clean(payload))
    return out


def error_record(exc: BaseException, config_hash: str | None = None) -> dict:
    return record(
        "error",
        {"error": type(exc).__name__, "message": str(exc), "exit_code": getattr(exc, "exit_code", 1)},
        config_hash,
    )


class RecordSink:
    """Writes records to a stream and optionally appends them to a file."""

    def __init__(self, path: Path | None = None, stream=None):
        self.path = path
        self.stream = stream if stream is not None else sys.stdout
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)

    def emit(self, rec: dict) -> None:
        line = json.dumps(rec, sort_keys=True)
        print(line, file=self.stream, flush=True)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def write_csv(path: Path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# figures ----------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_table(path: Path, header, rows, plot: dict | None = None) -> tuple[Path, Path | None]:
    """CSV plus a PNG beside it.

    ``plot`` keys: ``x`` (column name), ``y`` (list of column names), optional
    ``group`` (column splitting the series), ``title``, ``xlabel``, ``ylabel``,
    ``logy``, ``style`` ("line" or "points").
    """
    rows = list(rows)
    csv_path = write_csv(path, header, rows)
    if plot is None:
        return csv_path, None
    png = csv_path.with_suffix(".png")
    render(png, header, rows, **plot)
    return csv_path, png


def render(png: Path, header, rows, x, y, group=None, title=None, xlabel=None, ylabel=None, logy=False, style="line", hline=None):
    plt = _pyplot()
    col = {h: i for i, h in enumerate(header)}
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    groups = {}
    for row in rows:
        key = row[col[group]] if group else None
        groups.setdefault(key, []).append(row)
    marker = "o" if style == "points" else None
    ls = "none" if style == "points" else "-"
    for key, grp in groups.items():
        xs = np.array([float(r[col[x]]) for r in grp])
        for name in y:
            ys = np.array([float(r[col[name]]) for r in grp])
            if logy:
                ys = np.abs(ys)
            label = name if key is None else (f"{group}={key}" if len(y) == 1 else f"{name} {group}={key}")
            ax.plot(xs, ys, marker=marker or ".", linestyle=ls, label=label, markersize=4 if marker else 3)
    if hline is not None:
        ax.axhline(hline, color="0.5", lw=0.8, ls=":")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel or x)
    ax.set_ylabel(ylabel or (y[0] if len(y) == 1 else "value"))
    if title:
        ax.set_title(title, fontsize=10)
    if len(groups) * len(y) > 1:
        ax.legend(fontsize=7, frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png)
    plt.close(fig)
    return png


# standard tables ----------------------------------------------------------


def profile_rows(psi) -> tuple[list, list]:
    """Axis cuts of a centered field: one row per grid index."""
    g = psi.grid
    v = psi.values
    n = g.n
    header = ["x", "axis0", "axis1", "axis2"]
    # cell-centered grid: average the two samples nearest to each axis line
    c = [slice(m // 2 - 1, m // 2 + 1) for m in n]
    cuts = [
        v[:, c[1], c[2]].mean(axis=(1, 2)),
        v[c[0], :, c[2]].mean(axis=(0, 2)),
        v[c[0], c[1], :].mean(axis=(0, 1)),
    ]
    rows = []
    for i in range(max(n)):
        row = [float(g.axis(0)[min(i, n[0] - 1)])]
        row += [float(cuts[d][i]) if i < n[d] else float("nan") for d in range(3)]
        rows.append(row)
    return header, rows
