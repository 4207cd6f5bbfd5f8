"""Static figures rendered from result CSVs.

Bar charts group measured desk-scale Top-1 by version, one bar per
variant, with the published reference values drawn as hatched bars next
to them.  Figures are written as PNG files next to the delimited output.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_comparison", "plot_history"]


def _read_rows(csv_path):
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_comparison(results_csv, axis, out_path, title=None):
    """Grouped bar chart of Top-1 by version for one comparison axis."""
    rows = _read_rows(results_csv)
    if not rows:
        raise ValueError(f"no rows in {results_csv}")
    versions = sorted({r["version"] for r in rows})
    values = sorted({r[axis] for r in rows})
    width = 0.8 / max(len(values), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = np.arange(len(versions))
    for i, value in enumerate(values):
        tops, refs = [], []
        for v in versions:
            match = [r for r in rows if r["version"] == v and r[axis] == value]
            tops.append(100 * float(match[0]["top1"]) if match else 0.0)
            refs.append(float(match[0]["paper_ref_top1"]) if match and match[0]["paper_ref_top1"] else np.nan)
        offset = (i - (len(values) - 1) / 2) * width
        ax.bar(xs + offset, tops, width=width * 0.9, label=f"{value} (desk)")
        if not np.all(np.isnan(refs)):
            ax.bar(xs + offset, refs, width=width * 0.9, fill=False,
                   edgecolor="gray", hatch="//", label=f"{value} (reference)")
    ax.set_xticks(xs)
    ax.set_xticklabels(versions)
    ax.set_ylabel("Top-1 accuracy (%)")
    ax.set_title(title or f"Top-1 by {axis}")
    ax.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_history(history_csv, out_path):
    """Training curves: loss and validation error over epochs."""
    rows = _read_rows(history_csv)
    if not rows:
        raise ValueError(f"no rows in {history_csv}")
    epochs = [int(r["epoch"]) for r in rows]
    loss = [float(r["train_loss"]) for r in rows]
    err = [float(r["val_error"]) for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, loss, label="train loss", color="tab:blue")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, err, label="val error", color="tab:red")
    ax2.set_ylabel("val error", color="tab:red")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
