"""Inspection plots: mel spectrograms side by side and training loss curves."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .dsp import load_mel
from .errors import DataError


def plot_mels(paths: list[str | Path], out_path: str | Path, titles: list[str] | None = None) -> None:
    """Stack one panel per mel cache for visual comparison."""
    mels = [load_mel(p) for p in paths]
    titles = titles or [Path(p).stem for p in paths]
    fig, axes = plt.subplots(len(mels), 1, figsize=(10, 2.6 * len(mels)), squeeze=False)
    for ax, mel, title in zip(axes[:, 0], mels, titles):
        extent = (0.0, mel.n_frames * mel.frame_hop_seconds, 0, mel.n_mels)
        ax.imshow(mel.values, origin="lower", aspect="auto", extent=extent, cmap="magma")
        ax.set_title(title)
        ax.set_ylabel("mel band")
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_loss_curve(log_path: str | Path, out_path: str | Path) -> None:
    steps, losses = [], []
    with open(log_path, newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            losses.append(float(row["loss"]))
    if not steps:
        raise DataError(f"{log_path}: training log has no rows")
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(steps, losses, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
