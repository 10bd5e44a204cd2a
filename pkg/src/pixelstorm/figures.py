"""Figure rendering for campaign reports.

Used by the CLI report path only; the metrics module itself stays figure-free.
Everything draws straight onto Agg canvases, so no display is needed.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .metrics import MetricsReport


def _save(fig: Figure, path: Path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120, bbox_inches="tight")


def render_histogram(report: MetricsReport, path):
    bins = report.target_class_histogram
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    ax.bar(range(len(bins)), bins, color="#444444")
    ax.set_xlabel("number of reachable target classes")
    ax.set_ylabel("images")
    ax.set_title("Targets reachable per image")
    ax.set_xticks(range(len(bins)))
    _save(fig, path)


def render_pair_matrix(report: MetricsReport, path):
    matrix = np.asarray(report.pair_matrix)
    k = len(matrix)
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot(111)
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xlabel("realized target class")
    ax.set_ylabel("original class")
    ax.set_title("Successful original-to-target pairs")
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    if k <= 16:  # annotate only while it stays readable
        threshold = matrix.max() / 2 if matrix.max() else 0
        for i in range(k):
            for j in range(k):
                ax.text(
                    j,
                    i,
                    str(matrix[i, j]),
                    ha="center",
                    va="center",
                    fontsize=7,
                    color="white" if matrix[i, j] <= threshold else "black",
                )
    fig.colorbar(im, ax=ax, shrink=0.8)
    _save(fig, path)


def render_class_totals(report: MetricsReport, path):
    origin = report.class_totals_origin
    target = report.class_totals_target
    k = len(origin)
    xs = np.arange(k)
    width = 0.4
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot(111)
    ax.bar(xs - width / 2, origin, width, color="black", label="as origin")
    ax.bar(xs + width / 2, target, width, color="#999999", label="as target")
    ax.set_xlabel("class")
    ax.set_ylabel("successful attacks")
    ax.set_title("Per-class involvement in successful attacks")
    ax.set_xticks(xs)
    ax.legend()
    _save(fig, path)


def render_traces(traces, path):
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot(111)
    length = 0
    for trace in traces:
        gens = [p[0] for p in trace]
        best = [p[1] for p in trace]
        length = max(length, len(best))
        ax.plot(gens, best, color="#bbbbbb", linewidth=0.6)
    padded = [[p[1] for p in t] + [t[-1][1]] * (length - len(t)) for t in traces]
    mean = np.mean(padded, axis=0)
    ax.plot(range(length), mean, "r:", linewidth=2.0, label="mean best fitness")
    ax.set_xlabel("generation")
    ax.set_ylabel("best fitness")
    ax.set_title("Fitness over generations")
    ax.legend()
    _save(fig, path)


def render_report_figures(out_dir, report: MetricsReport, traces=None) -> list:
    """Render every applicable figure into ``out_dir/figures`` and list them."""
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    if report.target_class_histogram is not None:
        path = fig_dir / "histogram.png"
        render_histogram(report, path)
        written.append(path)

    path = fig_dir / "pair_matrix.png"
    render_pair_matrix(report, path)
    written.append(path)

    path = fig_dir / "class_totals.png"
    render_class_totals(report, path)
    written.append(path)

    if traces:
        path = fig_dir / "traces.png"
        render_traces(traces, path)
        written.append(path)

    return written
