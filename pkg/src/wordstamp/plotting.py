"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

import math
import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

# PNG metadata carries no timestamp; dropping the version keeps files stable across installs
_META = {"Software": None}


def _save(fig, path: str | os.PathLike):
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def timestamp_histograms(hists: Mapping[str, np.ndarray], path, resolution_ms: int = 10):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        for label, counts in hists.items():
            idx = np.arange(len(counts))
            ax.step(idx * resolution_ms / 1000.0, counts / max(counts.sum(), 1), where="mid", label=label)
        ax.set_xlabel("word end time (s)")
        ax.set_ylabel("fraction of timestamps")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        _save(fig, path)


def training_curves(log_rows: Sequence, path, w_reg: float | None = None):
    steps = np.array([r.step for r in log_rows])
    ce = np.array([r.ce for r in log_rows])
    reg = np.array([r.reg for r in log_rows])
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
        a1.plot(steps, ce, lw=0.8)
        a1.set_yscale("log")
        a1.set_xlabel("step")
        a1.set_ylabel("cross-entropy")
        a2.plot(steps, reg, lw=0.8, color="C1")
        a2.set_xlabel("step")
        a2.set_ylabel("MSE(S, G)")
        if w_reg is not None:
            a2.set_title(f"w_reg = {w_reg:g}")
        _save(fig, path)


def similarity_maps(S: np.ndarray, G: np.ndarray, path, title: str = ""):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.6))
        for ax, mat, name in zip(axes, (S, G), ("learned S", "target G")):
            im = ax.imshow(mat, vmin=-1, vmax=1, cmap="RdBu_r", interpolation="nearest")
            ax.set_title(name)
            ax.set_xlabel("timestamp token")
        axes[0].set_ylabel("timestamp token")
        fig.colorbar(im, ax=axes, shrink=0.8)
        if title:
            fig.suptitle(title)
        _save(fig, path)


def matrix_bars(rows: Mapping[str, Mapping[str, float]], path):
    """One panel per metric, one bar per ablation row."""
    metrics = sorted({m for r in rows.values() for m in r})
    labels = list(rows)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3 * len(metrics), 3), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            vals = [rows[k].get(metric, math.nan) for k in labels]
            ax.bar(range(len(labels)), [0 if v is None or math.isnan(v) else v for v in vals],
                   color=[f"C{i}" for i in range(len(labels))])
            ax.set_xticks(range(len(labels)))
            ax.set_xticklabels(labels, rotation=30, ha="right")
            ax.set_title(metric)
        _save(fig, path)
