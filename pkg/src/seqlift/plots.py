"""Figure rendering for evaluation reports.

Everything here draws from already-computed tabular data (histogram counts,
loss logs) so the figures are a pure presentation layer. The Agg backend is
forced so rendering works headless, and PNG metadata is stripped to keep
repeated renders byte-identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "HistogramSeries",
    "render_score_histogram",
    "render_loss_curves",
    "read_loss_log",
]

# one colour per method, stable across figures
_PALETTE = ["#444444", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]

_PNG_KW = {"metadata": {"Software": None}}


@dataclass(frozen=True)
class HistogramSeries:
    """One labelled distribution: bin left edges, counts and an optional mean."""

    label: str
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    mean: float | None = None


def _save(fig, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=150, **_PNG_KW)
    plt.close(fig)


def render_score_histogram(
    path: str,
    series: list[HistogramSeries],
    bin_width: float,
    xlabel: str = "oracle score",
    title: str | None = None,
) -> None:
    """Overlay per-method score distributions as step histograms.

    Counts are normalised to frequencies so pools of different sizes stay
    comparable. A dashed vertical line marks each series mean when given.
    """
    if not series:
        raise ValueError("no histogram series to draw")
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        total = float(sum(s.counts))
        if total <= 0:
            continue
        xs = []
        ys = []
        # step outline over the occupied bins
        for edge, count in zip(s.edges, s.counts):
            xs.extend([edge, edge + bin_width])
            ys.extend([count / total] * 2)
        ax.plot(xs, ys, color=color, label=s.label, linewidth=1.4)
        ax.fill_between(xs, ys, color=color, alpha=0.12, linewidth=0)
        if s.mean is not None:
            ax.axvline(s.mean, color=color, linestyle="--", linewidth=1.0, alpha=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("frequency")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def read_loss_log(path: str) -> dict[str, list[float]]:
    """Parse a tab-separated loss log back into per-column series."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"empty loss log: {path}")
    header = lines[0].split("\t")
    cols: dict[str, list[float]] = {name: [] for name in header}
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != len(header):
            raise ValueError(f"malformed loss log row in {path}: {ln!r}")
        for name, raw in zip(header, parts):
            cols[name].append(float(raw))
    return cols


def render_loss_curves(path: str, log_path: str, title: str | None = None) -> None:
    """Plot each loss component against the training step."""
    cols = read_loss_log(log_path)
    if "step" not in cols:
        raise ValueError(f"loss log {log_path} has no step column")
    steps = cols["step"]
    skip = {"step", "epoch", "lr", "warmup"}
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    i = 0
    for name, values in cols.items():
        if name in skip:
            continue
        width = 1.8 if name == "total" else 1.1
        ax.plot(steps, values, label=name, color=_PALETTE[i % len(_PALETTE)], linewidth=width)
        i += 1
    if "warmup" in cols and any(v > 0 for v in cols["warmup"]):
        first_on = next(s for s, w in zip(steps, cols["warmup"]) if w > 0)
        ax.axvline(first_on, color="#999999", linestyle=":", linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
