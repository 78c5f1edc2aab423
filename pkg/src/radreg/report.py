"""Matplotlib figure rendering for run and batch artifacts.

Figures are always rendered to files (Agg backend), next to the delimited
outputs they visualize.  Everything here consumes plain dicts and arrays,
so callers can feed either in-memory results or re-parsed CSVs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .image import Image
from .mesh import TriMesh


def save_box_plot(groups: dict[str, list[float]], ylabel: str, path: str | Path,
                  title: str = "") -> None:
    """One box-and-whisker per group (e.g. per measure)."""
    labels = list(groups)
    data = [groups[k] if len(groups[k]) else [np.nan] for k in labels]
    if not labels:
        labels, data = ["(no data)"], [[np.nan]]
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(labels), 4.0))
    ax.boxplot(data, tick_labels=labels, whis=(0, 100))
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_convergence_plot(curves: dict[str, list[float]], path: str | Path,
                          ylabel: str = "mean normalized data term") -> None:
    """Per-measure mean data term vs iteration, log scale, starting at 1."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, ys in curves.items():
        if not len(ys):
            continue
        ax.semilogy(range(len(ys)), ys, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_pending_plot(pending: dict[str, list[int]], path: str | Path) -> None:
    """How many successful runs are still iterating at each iteration."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, ys in pending.items():
        if not len(ys):
            continue
        ax.step(range(1, len(ys) + 1), ys, where="post", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("runs still iterating")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_jacobian_map(mesh: TriMesh, ratios: np.ndarray, path: str | Path) -> None:
    """Per-triangle area ratios on a diverging scale centered at 1."""
    spread = max(float(np.abs(np.asarray(ratios) - 1.0).max(initial=0.0)), 0.05)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    tp = ax.tripcolor(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles,
                      facecolors=np.asarray(ratios, dtype=np.float64),
                      cmap="RdBu_r", vmin=1.0 - spread, vmax=1.0 + spread,
                      edgecolors="k", linewidth=0.3)
    fig.colorbar(tp, ax=ax, label="area ratio")
    ax.set_aspect("equal")
    ax.set_title("deformation Jacobian (area ratio per triangle)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_difference_image(a: Image, b: Image, path: str | Path,
                          title: str = "difference") -> None:
    spread = max(float(np.abs(a.pixels - b.pixels).max(initial=0.0)), 1e-6)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(np.flipud(a.pixels - b.pixels), cmap="RdBu_r",
                   vmin=-spread, vmax=spread,
                   extent=(-a.extent, a.extent, -a.extent, a.extent))
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
