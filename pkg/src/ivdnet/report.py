"""Static report artefacts: loss curves, comparison table, overlay images."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def plot_loss_curves(histories: dict[str, list[dict]], path) -> Path:
    fig, (ax_loss, ax_dsc) = plt.subplots(1, 2, figsize=(10, 4))
    for name, hist in histories.items():
        epochs = [r["epoch"] for r in hist]
        ax_loss.plot(epochs, [r["train_loss"] for r in hist], label=name)
        ax_dsc.plot(epochs, [r["val_dsc"] for r in hist], label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_yscale("log")
    ax_dsc.set_xlabel("epoch")
    ax_dsc.set_ylabel("validation DSC")
    ax_loss.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def comparison_table(summaries: dict[str, dict]) -> str:
    """Markdown table with one row per architecture, ``mean ± std`` cells."""
    lines = [
        "| Architecture | DSC | Localization distance (voxels) |",
        "|---|---|---|",
    ]
    for name, agg in summaries.items():
        lines.append(f"| {name} | {agg['dsc']} | {agg['distance']} |")
    return "\n".join(lines) + "\n"


def write_comparison(summaries: dict[str, dict], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    md = out_dir / "comparison.md"
    md.write_text(comparison_table(summaries))
    path_csv = out_dir / "comparison.csv"
    keys = ["dsc_mean", "dsc_std", "distance_mean", "distance_std", "misses", "false_positives"]
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["architecture", *keys])
        for name, agg in summaries.items():
            w.writerow([name, *(agg[k] for k in keys)])
    return md, path_csv


def plot_overlay(modalities: Sequence[np.ndarray], names: Sequence[str], label: np.ndarray,
                 pred: np.ndarray, path, slice_index: int | None = None) -> Path:
    """Ground truth filled in red, predicted contour in cyan, one panel per modality."""
    if slice_index is None:
        slice_index = int(np.argmax(label.reshape(label.shape[0], -1).sum(1)))
    fig, axes = plt.subplots(1, len(modalities), figsize=(3.2 * len(modalities), 3.4))
    axes = np.atleast_1d(axes)
    gt = np.ma.masked_where(label[slice_index] == 0, label[slice_index])
    for ax, vol, name in zip(axes, modalities, names):
        ax.imshow(vol[slice_index], cmap="gray")
        ax.imshow(gt, cmap="autumn", alpha=0.45, vmin=0, vmax=1)
        if pred[slice_index].any():
            ax.contour(pred[slice_index], levels=[0.5], colors="cyan", linewidths=0.8)
        ax.set_title(name)
        ax.axis("off")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def load_summary(path) -> dict:
    return json.loads(Path(path).read_text())["aggregate"]
