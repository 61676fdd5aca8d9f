"""Figures for the summary report.

The CSV files are the canonical output; these PNGs are a convenience for
reading a run at a glance.  Everything renders off-screen through the Agg
backend.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METHOD_COLORS = {"baseline": "#4d4d4d", "mt-f": "#2b8cbe", "mt-r": "#e6550d"}
METHOD_LABELS = {"baseline": "MVNN", "mt-f": "MT-F", "mt-r": "MT-R"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _color(method: str) -> str:
    return METHOD_COLORS.get(method, "#31a354")


def efficiency_figure(summary: Sequence) -> plt.Figure:
    """Grouped bars of mean efficiency with one-std error bars per setting."""
    settings = sorted({s.setting for s in summary})
    methods = []
    for s in summary:
        if s.method not in methods:
            methods.append(s.method)
    lookup = {(s.setting, s.method): s for s in summary}
    width = 0.8 / max(len(methods), 1)
    x = np.arange(len(settings))

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.4, 1.2 * len(settings) + 1.5), 2.6))
        for k, method in enumerate(methods):
            rows = [lookup.get((st, method)) for st in settings]
            means = [r.mean if r else np.nan for r in rows]
            stds = [r.std if r else 0.0 for r in rows]
            ax.bar(x + (k - (len(methods) - 1) / 2) * width, means, width, yerr=stds,
                   color=_color(method), label=METHOD_LABELS.get(method, method),
                   capsize=2, error_kw={"elinewidth": 0.8})
            for xi, r in zip(x, rows):
                if r is not None and r.best:
                    ax.annotate("*", (xi + (k - (len(methods) - 1) / 2) * width, r.mean + r.std),
                                ha="center", va="bottom")
        lo = min((s.mean - s.std for s in summary), default=0.0)
        ax.set_ylim(max(0.0, lo - 0.05), 1.02)
        ax.set_xticks(x)
        ax.set_xticklabels(settings)
        ax.set_ylabel("efficiency")
        ax.legend(frameon=False, ncol=len(methods), loc="lower center")
    return fig


def mape_figure(mape_rows: Sequence[dict]) -> plt.Figure | None:
    """Mean per-round MAPE across seeds, one panel per setting."""
    if not mape_rows:
        return None
    settings = sorted({r["setting"] for r in mape_rows})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(settings), figsize=(3.2 * len(settings), 2.4),
                                 squeeze=False, sharey=True)
        for ax, setting in zip(axes[0], settings):
            sub = [r for r in mape_rows if r["setting"] == setting]
            methods = []
            for r in sub:
                if r["method"] not in methods:
                    methods.append(r["method"])
            for method in methods:
                per_round: dict[int, list[float]] = {}
                for r in sub:
                    if r["method"] == method:
                        per_round.setdefault(r["round"], []).append(r["mape"])
                rounds = sorted(per_round)
                ax.plot(rounds, [np.mean(per_round[k]) for k in rounds], marker="o",
                        color=_color(method), label=METHOD_LABELS.get(method, method))
            ax.set_title(setting)
            ax.set_xlabel("round")
        axes[0][0].set_ylabel("MAPE")
        axes[0][-1].legend(frameon=False)
    return fig


def render_report(summary: Sequence, mape_rows: Sequence[dict], out_path) -> list[Path]:
    """Write ``<stem>_efficiency.png`` and ``<stem>_mape.png`` next to ``out_path``."""
    out_path = Path(out_path)
    written = []
    fig = efficiency_figure(summary)
    p = out_path.with_name(out_path.stem + "_efficiency.png")
    fig.savefig(p, metadata={"Software": None})
    plt.close(fig)
    written.append(p)
    fig = mape_figure(mape_rows)
    if fig is not None:
        p = out_path.with_name(out_path.stem + "_mape.png")
        fig.savefig(p, metadata={"Software": None})
        plt.close(fig)
        written.append(p)
    return written
