"""Figure emission for the CLI: plane heatmaps, rectangle overlays, sweep
curves and ablation bars.

Heatmaps are rendered with the jet colormap over a fixed [0, 1] range and
written through PIL so the bytes depend only on the pixel data; matplotlib
figures are saved with the software tag stripped for reproducible output.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .codec import GraspMaps
from .geometry import GraspPose, GraspRectangle, rect_corners

HEATMAP_CMAP = "jet"

_SAVEFIG_KW = {"dpi": 120, "metadata": {"Software": None}}


def heatmap_image(plane: np.ndarray, vmin: float = 0.0, vmax: float = 1.0) -> Image.Image:
    """Colormapped image of one plane, clipped to the fixed value range."""
    norm = np.clip((plane - vmin) / (vmax - vmin), 0.0, 1.0)
    rgba = matplotlib.colormaps[HEATMAP_CMAP](norm)
    return Image.fromarray((rgba[..., :3] * 255).round().astype(np.uint8))


def angle_plane(maps: GraspMaps) -> np.ndarray:
    """Scalar view of the angle classes: bin-center angle / pi where quality
    is positive, zero elsewhere."""
    k = maps.angle.argmax(axis=0)
    value = (k + 0.5) / maps.num_angle_bins
    return np.where(maps.quality > 0.0, value, 0.0)


def save_map_heatmaps(maps: GraspMaps, out_dir, prefix: str = "maps") -> list[Path]:
    """Write quality / width / angle heatmaps; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, plane in (
        ("quality", maps.quality),
        ("width", maps.width),
        ("angle", angle_plane(maps)),
    ):
        path = out_dir / f"{prefix}_{name}.png"
        heatmap_image(plane).save(path)
        paths.append(path)
    return paths


def save_overlay(
    rgb: np.ndarray,
    poses_or_rects,
    out_path,
    truths: list[GraspRectangle] | None = None,
):
    """RGB image with decoded rectangles (green) and optional ground truth
    (yellow) drawn on top."""
    from .codec import pose_to_rectangle

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(rgb)
    for t in truths or []:
        pts = np.vstack([rect_corners(t), rect_corners(t)[:1]])
        ax.plot(pts[:, 0], pts[:, 1], color="yellow", linewidth=1.0)
    for item in poses_or_rects:
        rect = pose_to_rectangle(item) if isinstance(item, GraspPose) else item
        pts = np.vstack([rect_corners(rect), rect_corners(rect)[:1]])
        ax.plot(pts[:, 0], pts[:, 1], color="lime", linewidth=1.5)
    ax.set_xlim(0, rgb.shape[1])
    ax.set_ylim(rgb.shape[0], 0)
    ax.axis("off")
    fig.savefig(out_path, **_SAVEFIG_KW)
    plt.close(fig)


def save_sweep_curves(sweep_result, jaccard_path, angle_path):
    """Accuracy-vs-threshold line plots for the two fixed-axis sweeps."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [j for j, _ in sweep_result.jaccard_curve]
    ys = [a for _, a in sweep_result.jaccard_curve]
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("Jaccard threshold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(jaccard_path, **_SAVEFIG_KW)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [math.degrees(a) for a, _ in sweep_result.angle_curve]
    ys = [acc for _, acc in sweep_result.angle_curve]
    ax.plot(xs, ys, marker="o", color="tab:orange")
    ax.set_xlabel("angle threshold (deg)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(angle_path, **_SAVEFIG_KW)
    plt.close(fig)


def save_ablation_bars(results: dict[str, dict[tuple[float, float], float]], out_path):
    """Grouped bars: one group per metric config, one bar per variant."""
    variants = sorted(results)
    configs = sorted({cfg for r in results.values() for cfg in r})
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(configs), 3.5))
    width = 0.8 / max(1, len(variants))
    for vi, variant in enumerate(variants):
        xs = np.arange(len(configs)) + vi * width
        ys = [results[variant].get(cfg, 0.0) for cfg in configs]
        ax.bar(xs, ys, width=width, label=variant)
    ax.set_xticks(np.arange(len(configs)) + 0.4 - width / 2)
    ax.set_xticklabels([f"J>{j:g}\n<{math.degrees(a):.0f}°" for j, a in configs], fontsize=8)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVEFIG_KW)
    plt.close(fig)
