"""Figure rendering: annotated traces, prediction overlays, metric summaries.

All functions render straight to files (SVG by extension) using the Agg
backend; nothing opens a display. Wave shading keeps one color per wave
kind across the whole package: P red, QRS green, T magenta.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .evaluation import MetricsReport  # noqa: E402
from .records import EcgRecord, FiducialSet, WaveKind  # noqa: E402

WAVE_COLORS = {
    WaveKind.P: "red",
    WaveKind.QRS: "green",
    WaveKind.T: "magenta",
}
_SHADE_ALPHA = 0.25


def _shade(ax, fids: FiducialSet, fs: float, alpha=_SHADE_ALPHA):
    for wave in WaveKind:
        for on, off in fids.pairs(wave):
            ax.axvspan(on / fs, off / fs, color=WAVE_COLORS[wave], alpha=alpha, linewidth=0)


def _pred_bands(ax, fids: FiducialSet, fs: float):
    """Draw predicted intervals as thin bars pinned to the top of the axes."""
    y0, y1 = 0.94, 1.0
    for wave in WaveKind:
        for on, off in fids.pairs(wave):
            ax.axvspan(
                on / fs, off / fs, ymin=y0, ymax=y1,
                color=WAVE_COLORS[wave], alpha=0.9, linewidth=0,
            )


def plot_record(
    record: EcgRecord,
    path,
    fids: FiducialSet | None = None,
    title: str | None = None,
) -> None:
    """One subplot per lead; annotated wave intervals shaded underneath."""
    fs = record.sampling_rate
    t = np.arange(record.n_samples) / fs
    fig, axes = plt.subplots(
        record.n_leads, 1, sharex=True, squeeze=False,
        figsize=(10, 1.8 * record.n_leads + 0.8),
    )
    for li in range(record.n_leads):
        ax = axes[li, 0]
        if fids is not None:
            _shade(ax, fids, fs)
        ax.plot(t, record.signal[li], color="black", linewidth=0.7)
        ax.set_ylabel(record.lead_names[li], rotation=0, ha="right", va="center")
    axes[-1, 0].set_xlabel("time [s]")
    fig.suptitle(title or record.id)
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def plot_comparison(
    record: EcgRecord,
    true_fids: FiducialSet,
    pred_fids: FiducialSet,
    path,
    title: str | None = None,
) -> None:
    """Truth shaded under the trace, predictions as bands along the top."""
    fs = record.sampling_rate
    t = np.arange(record.n_samples) / fs
    fig, axes = plt.subplots(
        record.n_leads, 1, sharex=True, squeeze=False,
        figsize=(10, 1.8 * record.n_leads + 0.8),
    )
    for li in range(record.n_leads):
        ax = axes[li, 0]
        _shade(ax, true_fids, fs)
        _pred_bands(ax, pred_fids, fs)
        ax.plot(t, record.signal[li], color="black", linewidth=0.7)
        ax.set_ylabel(record.lead_names[li], rotation=0, ha="right", va="center")
    axes[-1, 0].set_xlabel("time [s]")
    fig.suptitle(title or f"{record.id}: shaded = truth, top bands = prediction")
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def plot_metrics_summary(report: MetricsReport, path, title: str | None = None) -> None:
    """Grouped bars of precision/recall/F1 per wave."""
    waves = list(WaveKind)
    metrics = [
        ("Pr", [report.waves[w].detection.precision for w in waves]),
        ("Re", [report.waves[w].detection.recall for w in waves]),
        ("F1", [report.waves[w].detection.f1 for w in waves]),
    ]
    x = np.arange(len(waves), dtype=np.float64)
    width = 0.25
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, (label, values) in enumerate(metrics):
        ax.bar(x + (k - 1) * width, values, width,
               label=label, edgecolor="black", linewidth=0.5)
    ax.set_xticks(x)
    ax.set_xticklabels([w.name for w in waves])
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    ax.set_title(title or f"detection metrics ({report.mode} mode)")
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def plot_loss_log(rows, path, title: str | None = None) -> None:
    """Training curves: total plus each component, per step."""
    rows = list(rows)
    steps = [r[1] for r in rows]
    series = [
        ("total", [r[2] for r in rows]),
        ("dice", [r[3] for r in rows]),
        ("boundary", [r[4] for r in rows]),
        ("f1", [r[5] for r in rows]),
    ]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, values in series:
        ax.plot(steps, values, label=label, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title(title or "training loss")
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)
