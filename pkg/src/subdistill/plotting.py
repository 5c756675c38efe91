"""SVG figures for reports; deterministic output when requested."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


@contextmanager
def _figure(path, deterministic: bool, **kwargs):
    rc = {"svg.hashsalt": "subdistill", "svg.fonttype": "none"} if deterministic else {}
    with plt.rc_context(rc):
        fig = plt.figure(**kwargs)
        try:
            yield fig
            fig.tight_layout()
            fig.savefig(Path(path), format="svg", metadata={"Date": None} if deterministic else None)
        finally:
            plt.close(fig)


def kernel_panels(kernels: Mapping[str, np.ndarray], relevant: tuple[int, int], path, deterministic: bool = True) -> Path:
    """One heat map per kernel, each scaled to its own max |value|, relevant block outlined."""
    names = list(kernels)
    with _figure(path, deterministic, figsize=(3.2 * len(names), 3.2)) as fig:
        for i, name in enumerate(names):
            ax = fig.add_subplot(1, len(names), i + 1)
            k = np.asarray(kernels[name])
            lim = float(np.max(np.abs(k))) or 1.0
            ax.imshow(k, cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest")
            a, b = relevant
            ax.add_patch(plt.Rectangle((a - 0.5, a - 0.5), b - a, b - a, fill=False, lw=1.0, ec="k"))
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
    return Path(path)


def loss_curves(rows: Sequence[dict], path, deterministic: bool = True) -> Path:
    """Per-epoch loss columns of a run (log scale where positive)."""
    keys = [k for k in rows[0] if k == "output_loss" or k.startswith("layer_")] if rows else []
    with _figure(path, deterministic, figsize=(5, 3.5)) as fig:
        ax = fig.add_subplot(1, 1, 1)
        epochs = [r["epoch"] for r in rows]
        for key in keys:
            ys = np.array([r.get(key, np.nan) for r in rows], dtype=float)
            if np.any(ys > 0):
                ax.plot(epochs, ys, label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        if any(np.any(np.array([r.get(k, 0) for r in rows], float) > 0) for k in keys):
            ax.set_yscale("log")
            ax.legend(fontsize=7)
    return Path(path)


def accuracy_bars(labels: Sequence[str], means: Sequence[float], errors: Sequence[float], path, deterministic: bool = True) -> Path:
    """Mean validation accuracy with ±1 standard error bars."""
    with _figure(path, deterministic, figsize=(max(4, 0.6 * len(labels) + 2), 3.5)) as fig:
        ax = fig.add_subplot(1, 1, 1)
        x = np.arange(len(labels))
        ax.bar(x, means, yerr=errors, capsize=3, color="0.6")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("val accuracy")
        ax.set_ylim(0, 1)
    return Path(path)


def patch_scatter(points: np.ndarray, correlation: float, path, deterministic: bool = True) -> Path:
    with _figure(path, deterministic, figsize=(3.5, 3.5)) as fig:
        ax = fig.add_subplot(1, 1, 1)
        ax.scatter(points[:, 0], points[:, 1], s=6)
        ax.set_xlabel("teacher patch relevance")
        ax.set_ylabel("student patch relevance")
        ax.set_title(f"r = {correlation:.3f}")
    return Path(path)


def line_plot(series: Mapping[str, Sequence[tuple[float, float, float]]], xlabel: str, path, deterministic: bool = True) -> Path:
    """Lines of (x, mean, standard error) points with error bars."""
    with _figure(path, deterministic, figsize=(5, 3.5)) as fig:
        ax = fig.add_subplot(1, 1, 1)
        for name, pts in series.items():
            pts = np.asarray(pts, dtype=float)
            err = np.nan_to_num(pts[:, 2])
            ax.errorbar(pts[:, 0], pts[:, 1], yerr=err, marker="o", capsize=3, label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("val accuracy")
        ax.legend(fontsize=7)
    return Path(path)
