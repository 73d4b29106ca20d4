"""Render figures from the delimited outputs each command writes.

Every figure lands next to the CSV/JSON it was drawn from; rendering is
best-effort decoration of the run directory and never alters the data
files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "plot_training_log",
    "plot_spr_curve",
    "plot_mse_table",
    "plot_metric_comparison",
]


def _read_csv(path: Path) -> list[dict]:
    with open(path) as fh:
        rows = [r for r in csv.DictReader(
            line for line in fh if not line.startswith("#"))]
    return rows


def plot_training_log(log_csv: str | Path, out_png: str | Path | None = None) -> Path:
    """Reward / loss / epsilon / message curves from a route-training log."""
    log_csv = Path(log_csv)
    rows = _read_csv(log_csv)
    out = Path(out_png) if out_png else log_csv.with_suffix(".png")
    steps = [float(r["step"]) for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    panels = [
        ("reward_ma500", "reward (running mean)"),
        ("loss", "TD loss"),
        ("q_ma500", "max Q (running mean)"),
        ("messages_ma500", "messages per node (running mean)"),
    ]
    for ax, (key, label) in zip(axes.ravel(), panels):
        vals = [float(r[key]) if r[key] not in ("", "nan") else float("nan")
                for r in rows]
        ax.plot(steps, vals, lw=0.9)
        ax.set_title(label)
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("environment step")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_spr_curve(curve_csv: str | Path, out_png: str | Path | None = None) -> Path:
    """Validation-loss curve of a supervised run (log scale)."""
    curve_csv = Path(curve_csv)
    rows = _read_csv(curve_csv)
    out = Path(out_png) if out_png else curve_csv.with_suffix(".png")
    its = [int(r["iteration"]) for r in rows]
    val = [float(r["val_mse"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(its, val, marker="o", ms=3)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("validation MSE")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_mse_table(mse_csv: str | Path, out_png: str | Path | None = None) -> Path:
    """MSE against observation-window length (log-log)."""
    mse_csv = Path(mse_csv)
    rows = _read_csv(mse_csv)
    out = Path(out_png) if out_png else mse_csv.with_suffix(".png")
    lens = [int(r["seq_len"]) for r in rows]
    mse = [float(r["mse"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(lens, mse, marker="o")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("observation window length")
    ax.set_ylabel("test MSE")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_metric_comparison(metrics_csvs: dict[str, str | Path],
                           out_png: str | Path) -> Path:
    """Bar panels comparing aggregate metrics across runs."""
    from .evalkit import METRIC_FIELDS

    agg: dict[str, dict] = {}
    for name, path in metrics_csvs.items():
        rows = _read_csv(Path(path))
        agg[name] = next(r for r in rows if r["seed"] == "aggregate")
    fig, axes = plt.subplots(2, 4, figsize=(14, 6))
    names = list(agg)
    for ax, key in zip(axes.ravel(), METRIC_FIELDS):
        vals = [float(agg[n][key]) for n in names]
        errs = [float(agg[n].get(f"{key}_std", 0.0)) for n in names]
        ax.bar(range(len(names)), vals, yerr=errs, capsize=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(key)
        ax.grid(alpha=0.3, axis="y")
    axes.ravel()[-1].axis("off")
    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
