"""Delimited output and figures for eval/train runs.

matplotlib runs on the Agg backend; everything renders straight to files.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport


def write_csv(path: str, rows: list[dict], fieldnames: list[str] | None = None) -> None:
    if fieldnames is None:
        if not rows:
            raise ValueError("cannot infer fieldnames from zero rows")
        fieldnames = list(rows[0].keys())
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def save_loss_curve(path: str, losses: list[float], lrs: list[float] | None = None) -> None:
    """Training loss on a log axis, with the lr schedule on a twin axis."""
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = np.arange(1, len(losses) + 1)
    ax.plot(steps, losses, lw=0.9, color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    if lrs is not None:
        ax2 = ax.twinx()
        ax2.plot(steps, lrs, lw=0.8, color="tab:orange", alpha=0.7, label="lr")
        ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(path: str, report: EvalReport) -> None:
    """Per-image PSNR bars, proxy vs final reconstruction."""
    names = [row["image"] for row in report.rows]
    final = [row["psnr_db"] for row in report.rows]
    proxy = [row["proxy_psnr_db"] for row in report.rows]
    x = np.arange(len(names))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(names)), 4))
    ax.bar(x - width / 2, proxy, width, label="proxy", color="tab:gray")
    ax.bar(x + width / 2, final, width, label="reconstruction", color="tab:blue")
    ax.axhline(report.mean_psnr, color="tab:blue", ls="--", lw=0.8, alpha=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"CR {report.achieved_cr:.3f}  mean {report.mean_psnr:.2f} dB")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_image_grid(
    path: str,
    images: list[np.ndarray],
    titles: list[str] | None = None,
    columns: int = 3,
) -> None:
    """Tile [0, 1] float images into one figure."""
    if not images:
        raise ValueError("no images to plot")
    n = len(images)
    columns = min(columns, n)
    rows = (n + columns - 1) // columns
    fig, axes = plt.subplots(rows, columns, figsize=(3 * columns, 3 * rows))
    axes = np.atleast_1d(axes).ravel()
    for i, ax in enumerate(axes):
        ax.axis("off")
        if i >= n:
            continue
        img = np.clip(images[i], 0.0, 1.0)
        if img.ndim == 3 and img.shape[2] == 1:
            img = img[:, :, 0]
        ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0.0, vmax=1.0)
        if titles is not None and i < len(titles):
            ax.set_title(titles[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
