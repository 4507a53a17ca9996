"""Figures for the CLI report path, written with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.fontsize": 8,
    "svg.hashsalt": "blockagg",
}

# strip timestamps so identical data gives identical files
_METADATA = {".pdf": {"CreationDate": None}, ".svg": {"Date": None}, ".png": {}}


def save_figure(fig, path) -> Path:
    path = Path(path)
    meta = _METADATA.get(path.suffix.lower(), None)
    fig.savefig(path, bbox_inches="tight", dpi=150, metadata=meta)
    plt.close(fig)
    return path


def line_plot(rows: Sequence[dict], x: str, ys: Sequence[str], path, *, xlabel=None, ylabel=None,
              logx=False, logy=False, step=False, group: str | None = None, title=None) -> Path:
    """One line per column in ``ys`` (or per value of ``group``) against ``x``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        groups = sorted({r[group] for r in rows}) if group else [None]
        for g in groups:
            sub = [r for r in rows if group is None or r[group] == g]
            xs = [r[x] for r in sub]
            for y in ys:
                label = y if g is None else f"{group}={g}" if len(ys) == 1 else f"{y} ({group}={g})"
                draw = ax.step if step else ax.plot
                kw = {"where": "post"} if step else {"marker": "o", "markersize": 3}
                draw(xs, [r[y] for r in sub], label=label, **kw)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel or x)
        ax.set_ylabel(ylabel or (ys[0] if len(ys) == 1 else "value"))
        if title:
            ax.set_title(title)
        if len(ys) > 1 or group:
            ax.legend()
        return save_figure(fig, path)


def bar_plot(labels: Sequence[str], values: Sequence[float], path, *, ylabel=None, logy=False,
             title=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(list(labels), list(values), color="0.4")
        if logy:
            ax.set_yscale("log")
        if ylabel:
            ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        return save_figure(fig, path)
