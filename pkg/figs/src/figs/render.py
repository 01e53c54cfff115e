"""Rendering of sweep, convergence, and channel-gain figures.

Consumes the simulator's exported file schemas only:

- sweep results: ``sweep_var,sweep_value,drop,scheme,sum_rate,rate_user1,
  rate_user2,feasible,ao_rounds,seconds``
- solve traces: ``series,iteration,value``
- heatmaps: ``x,y,gain_db_wg1,gain_db_wg2``

Inputs are never mutated and identical inputs yield identical images.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("line-sweep", "convergence", "heatmap")
REQUIRED = {
    "line-sweep": ("sweep_value", "sum_rate"),
    "convergence": ("series", "iteration", "value"),
    "heatmap": ("x", "y", "gain_db_wg1", "gain_db_wg2"),
}


class SchemaError(ValueError):
    """The input file does not carry the columns the figure kind needs."""


@dataclass
class FigureSpec:
    input: str
    kind: str
    series: str = "scheme"
    x_label: str = ""
    y_label: str = ""
    title: str = ""
    name: str = ""
    x_transform: str = "none"  # none | watts-to-dbm

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.name:
            self.name = self.kind

    def output_path(self, out_dir) -> Path:
        return Path(out_dir) / f"{self.name}.png"


def load_specs(path) -> list:
    """One spec object or a list of them, as JSON."""
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        raw = [raw]
    return [FigureSpec(**entry) for entry in raw]


def _read_rows(path, kind, series_column=None):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = list(REQUIRED[kind])
        if series_column and kind == "line-sweep":
            needed.append(series_column)
        for column in needed:
            if column not in header:
                raise SchemaError(
                    f"column {column!r} missing from {path} (found {header})")
        return list(reader)


def _x_values(values, transform):
    values = np.asarray(values, dtype=float)
    if transform == "watts-to-dbm":
        return 10.0 * np.log10(values) + 30.0
    return values


def _empty_figure(spec: FigureSpec, out_path: Path):
    print(f"warning: {spec.input} has no data rows; writing empty axes",
          file=sys.stderr)
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    ax.set_title(spec.title or "(no data)")
    ax.set_xlabel(spec.x_label)
    ax.set_ylabel(spec.y_label)
    fig.savefig(out_path)
    plt.close(fig)


def _render_line_sweep(spec: FigureSpec, out_path: Path):
    rows = _read_rows(spec.input, "line-sweep", spec.series)
    if not rows:
        _empty_figure(spec, out_path)
        return
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    groups = sorted({row[spec.series] for row in rows})
    markers = "osd^vP*X"
    for gi, group in enumerate(groups):
        data: dict = {}
        for row in rows:
            if row[spec.series] != group:
                continue
            value = float(row["sum_rate"])
            if np.isfinite(value):
                data.setdefault(float(row["sweep_value"]), []).append(value)
        xs = sorted(data)
        means = np.array([np.mean(data[x]) for x in xs])
        errs = np.array([np.std(data[x], ddof=1) / np.sqrt(len(data[x]))
                         if len(data[x]) > 1 else 0.0 for x in xs])
        plot_x = _x_values(xs, spec.x_transform)
        ax.plot(plot_x, means, marker=markers[gi % len(markers)], label=group)
        ax.fill_between(plot_x, means - errs, means + errs, alpha=0.2)
    ax.set_xlabel(spec.x_label or "sweep value")
    ax.set_ylabel(spec.y_label or "sum rate (bits/s/Hz)")
    ax.set_title(spec.title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def _render_convergence(spec: FigureSpec, out_path: Path):
    rows = _read_rows(spec.input, "convergence")
    if not rows:
        _empty_figure(spec, out_path)
        return
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    for series in sorted({row["series"] for row in rows}):
        pairs = sorted((int(r["iteration"]), float(r["value"]))
                       for r in rows if r["series"] == series)
        ax.plot([p[0] for p in pairs], [p[1] for p in pairs], label=series)
    ax.set_xlabel(spec.x_label or "iteration")
    ax.set_ylabel(spec.y_label or "objective")
    ax.set_title(spec.title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def _render_heatmap(spec: FigureSpec, out_path: Path):
    rows = _read_rows(spec.input, "heatmap")
    if not rows:
        _empty_figure(spec, out_path)
        return
    xs = np.array([float(r["x"]) for r in rows])
    ys = np.array([float(r["y"]) for r in rows])
    ux, uy = np.unique(xs), np.unique(ys)
    fig, axes = plt.subplots(2, 1, figsize=(6, 7), dpi=120)
    for panel, column in enumerate(("gain_db_wg1", "gain_db_wg2")):
        grid = np.full((len(uy), len(ux)), np.nan)
        values = np.array([float(r[column]) for r in rows])
        ix = np.searchsorted(ux, xs)
        iy = np.searchsorted(uy, ys)
        grid[iy, ix] = values
        mesh = axes[panel].pcolormesh(ux, uy, grid, shading="nearest",
                                      vmax=0.0)
        fig.colorbar(mesh, ax=axes[panel], label="gain (dB)")
        axes[panel].set_xlabel(spec.x_label or "x (m)")
        axes[panel].set_ylabel(spec.y_label or "y (m)")
        axes[panel].set_title(f"waveguide {panel + 1}")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def render(spec: FigureSpec, out_dir) -> Path:
    """Render one figure; returns the written image path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = spec.output_path(out_dir)
    if spec.kind == "line-sweep":
        _render_line_sweep(spec, out_path)
    elif spec.kind == "convergence":
        _render_convergence(spec, out_path)
    else:
        _render_heatmap(spec, out_path)
    return out_path
