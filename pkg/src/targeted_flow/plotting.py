"""Static SVG figures.  Output is byte-stable: fixed hash salt, no date metadata."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "targeted-flow", "font.size": 9, "axes.spines.top": False, "axes.spines.right": False}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def scatter(panels, path, limits=(-2.5, 2.5), max_points=4000):
    """One panel per ``(title, samples, weights_or_None)``; the first two coordinates are shown.

    Weighted sets are drawn with marker area proportional to weight.
    """
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.6 * len(panels), 2.6), squeeze=False)
        for ax, (title, x, w) in zip(axes[0], panels):
            x = np.asarray(x)[:max_points]
            if w is None:
                sizes = np.full(len(x), 2.0)
            else:
                w = np.asarray(w)[:max_points]
                sizes = 2.0 * w * len(w) / max(w.sum(), 1e-300)
            ax.scatter(x[:, 0], x[:, 1], s=sizes, c="k", alpha=0.4, linewidths=0, rasterized=False)
            ax.set_title(title)
            ax.set_xlim(*limits)
            ax.set_ylim(*limits)
            ax.set_aspect("equal")
        _save(fig, path)


def line(x, series, path, xlabel, ylabel, logx=False, logy=False):
    """``series`` maps a label to y-values aligned with ``x``; optional per-label error bars via ``(y, err)``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        for label, ys in series.items():
            if isinstance(ys, tuple):
                ax.errorbar(x, ys[0], yerr=ys[1], marker="o", ms=3, capsize=2, label=label)
            else:
                ax.plot(x, ys, marker="o", ms=3, label=label)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(series) > 1:
            ax.legend(frameon=False)
        _save(fig, path)
