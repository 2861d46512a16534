"""Static SVG line charts of experiment CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .exceptions import ArgumentError  # noqa: E402


def _numeric_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ArgumentError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    keep = []
    for row in body:
        try:
            float(row[0])
        except (ValueError, IndexError):
            continue  # summary or malformed rows
        keep.append(row)
    columns = {}
    for c, name in enumerate(header):
        vals = []
        for row in keep:
            try:
                vals.append(float(row[c]))
            except (ValueError, IndexError):
                vals = None
                break
        if vals is not None:
            columns[name] = vals
    return header, columns


def plot_csv(path, out_dir):
    """Plot every numeric column of ``path`` against its first column; returns the SVG path."""
    path = Path(path)
    if not path.exists():
        raise ArgumentError(f"no such CSV file: {path}")
    header, columns = _numeric_table(path)
    xname = header[0]
    if xname not in columns:
        raise ArgumentError(f"first column of {path} is not numeric")
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, vals in columns.items():
        if name in (xname, "instance"):
            continue
        ax.plot(columns[xname], vals, marker="o", markersize=2, label=name)
    ax.set_xlabel(xname)
    ax.set_title(path.stem)
    if len(columns) > 1:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{path.stem}.svg"
    # fixed metadata keeps the SVG bytes reproducible
    fig.savefig(target, format="svg", metadata={"Date": None})
    plt.close(fig)
    return target
