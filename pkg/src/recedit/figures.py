"""Figure rendering for benchmark reports.

Renders the aggregate report as PNG files next to the CSV output: one panel
of editing metrics per editor (mean with std error bars) and one editing-time
chart.  Uses the Agg backend so it works headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

METRIC_PANELS = ("ea", "ec", "ep", "es")
BAR_COLOR = "#4878d0"


def _editor_labels(summary):
    return [f"{s['editor']}:{s['objective']}" for s in summary]


def render_metrics_figure(summary: list[dict], path) -> None:
    """2x2 grid of per-editor bars, one panel per editing metric."""
    labels = _editor_labels(summary)
    x = np.arange(len(labels))
    fig, axes = plt.subplots(2, 2, figsize=(max(6.0, 1.2 * len(labels) + 3), 6.0),
                             sharex=True)
    for ax, metric in zip(axes.ravel(), METRIC_PANELS):
        means = [s[f"{metric}_mean"] for s in summary]
        stds = [s[f"{metric}_std"] for s in summary]
        ax.bar(x, means, yerr=stds, capsize=3, color=BAR_COLOR)
        ax.set_title(metric.upper())
        ax.set_ylim(0.0, 1.05)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle("Editing metrics (mean ± std over repeats)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_timing_figure(timing: list[dict], path) -> None:
    """Mean editing wall time per editor, individual repeats overlaid."""
    groups: dict[str, list[float]] = {}
    for row in timing:
        groups.setdefault(f"{row['editor']}:{row['objective']}", []).append(
            float(row["wall_time_s"]))
    labels = list(groups)
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(labels) + 3), 4.0))
    means = [float(np.mean(groups[lab])) for lab in labels]
    ax.bar(x, means, color=BAR_COLOR, alpha=0.8)
    for xi, lab in zip(x, labels):
        vals = groups[lab]
        ax.plot(np.full(len(vals), xi), vals, "k.", markersize=4, alpha=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("edit wall time (s)")
    ax.set_title("Editing efficiency")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report_figures(report, out_dir) -> list[str]:
    """Render all report figures; returns the file paths."""
    written = []
    if report.summary:
        path = os.path.join(out_dir, "metrics.png")
        render_metrics_figure(report.summary, path)
        written.append(path)
    if report.timing:
        path = os.path.join(out_dir, "timing.png")
        render_timing_figure(report.timing, path)
        written.append(path)
    return written
