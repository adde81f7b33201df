"""Static SVG plots of learning curves and episode traces."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .train import read_csv  # noqa: E402


class CSVParseError(ValueError):
    pass


def _numeric_columns(path, wanted: Sequence[str]) -> dict:
    try:
        _, header, rows = read_csv(path)
    except ValueError as exc:
        raise CSVParseError(str(exc)) from exc
    missing = [c for c in wanted if c not in header]
    if missing:
        raise CSVParseError(f"{path}: row 2: missing column(s) {missing}")
    cols = {c: [] for c in wanted}
    for r, row in enumerate(rows, start=3):
        if len(row) != len(header):
            raise CSVParseError(f"{path}: row {r}: expected {len(header)} fields, got {len(row)}")
        for c in wanted:
            raw = row[header.index(c)]
            try:
                cols[c].append(float(raw))
            except ValueError:
                raise CSVParseError(f"{path}: row {r}, column {c!r}: not a number: {raw!r}") from None
    return {c: np.array(v) for c, v in cols.items()}


def smooth(y, window: int = 20) -> np.ndarray:
    """Trailing moving average; shorter windows at the start."""
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        return y
    c = np.cumsum(np.r_[0.0, y])
    idx = np.arange(1, len(y) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def plot_learning_curves(metrics: Sequence, out_path, labels=None, window: int = 20):
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, path in enumerate(metrics):
        d = _numeric_columns(path, ["step", "return"])
        label = labels[k] if labels else Path(path).parent.name
        if len(d["step"]):
            ax.plot(d["step"], smooth(d["return"], window), label=label,
                    marker="o" if len(d["step"]) == 1 else None)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("episode return (smoothed)")
    if ax.lines:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_trace(trace_csv, out_path):
    from ..env import TRACE_HEADER
    numeric = [c for c in TRACE_HEADER if c != "done"]
    d = _numeric_columns(trace_csv, numeric)
    t = d["t"]
    marker = "o" if len(t) == 1 else None
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for c in ("rel_x", "rel_y", "rel_z"):
        axes[0].plot(t, d[c] * 1e3, label=c, marker=marker)
    axes[0].set_ylabel("distance to goal (mm)")
    axes[0].legend(loc="upper right", fontsize=7)
    for c in ("fx", "fy", "fz", "mx", "my", "mz"):
        axes[1].plot(t, d[c], label=c, marker=marker)
    axes[1].set_ylabel("contact wrench (N, N m)")
    axes[1].legend(loc="upper right", fontsize=7, ncol=2)
    for i in range(24):
        axes[2].plot(t, d[f"a{i}"], lw=0.8, marker=marker)
    axes[2].set_ylabel("policy actions")
    axes[2].set_xlabel("policy step")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def emit_plots(metrics: Sequence = (), traces: Sequence = (), out_dir=".") -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if metrics:
        written.append(plot_learning_curves(metrics, out / "learning_curve.svg"))
    for tr in traces:
        written.append(plot_trace(tr, out / f"{Path(tr).stem}_trace.svg"))
    return written
