"""Artifact writers: metrics CSV, PGM heatmaps and matplotlib figures."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import UsageError  # noqa: E402
from .federation import RoundMetrics  # noqa: E402
from .importance import ImportanceMap  # noqa: E402

METRICS_HEADER = ("curve",) + RoundMetrics.CSV_FIELDS
DPI = 120


def write_metrics(path, curve: str, rows: Iterable[RoundMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([curve] + r.row())


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary(path, figure: str, curves: dict[str, Sequence[RoundMetrics]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("figure",) + METRICS_HEADER)
        for curve, rows in curves.items():
            for r in rows:
                w.writerow([figure, curve] + r.row())


def heatmap_pixels(scores: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Min-max scale to uint8 (least important = 0); a constant map is all 128."""
    scores = np.asarray(scores, dtype=np.float64)
    if shape is None:
        side = math.isqrt(len(scores))
        if side * side != len(scores):
            raise UsageError(f"{len(scores)} scores is not a perfect square; pass an explicit shape")
        shape = (side, side)
    if shape[0] * shape[1] != len(scores):
        raise UsageError(f"shape {shape} does not hold {len(scores)} scores")
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        pix = np.full(len(scores), 128, dtype=np.uint8)
    else:
        pix = np.rint(255.0 * (scores - lo) / (hi - lo)).astype(np.uint8)
    return pix.reshape(shape)


def emit_heatmap(fi: ImportanceMap | np.ndarray, path, shape: tuple[int, int] | None = None) -> Path:
    """Write an 8-bit binary PGM (P5) of the importance map."""
    scores = fi.scores if isinstance(fi, ImportanceMap) else fi
    pix = heatmap_pixels(scores, shape)
    path = Path(path)
    rows, cols = pix.shape
    path.write_bytes(f"P5 {cols} {rows} 255\n".encode("ascii") + pix.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise UsageError(f"{path}: not a binary PGM")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise UsageError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(raw[-rows * cols:], dtype=np.uint8).reshape(rows, cols)


def plot_heatmaps(maps: dict[str, ImportanceMap], path, shape: tuple[int, int] | None = None) -> Path:
    """Grid of importance maps, one panel per entry, darker = less important."""
    fig, axes = plt.subplots(1, len(maps), figsize=(2.2 * len(maps), 2.5), squeeze=False)
    for ax, (title, fi) in zip(axes[0], maps.items()):
        ax.imshow(heatmap_pixels(fi.scores, shape), cmap="gray", vmin=0, vmax=255)
        ax.set_title(title, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return Path(path)


def plot_curves(curves: dict[str, Sequence[RoundMetrics]], path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rows in curves.items():
        ax.plot([r.round for r in rows], [r.test_accuracy for r in rows], marker=".", label=name)
    ax.set_xlabel("global round")
    ax.set_ylabel("test accuracy")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return Path(path)
