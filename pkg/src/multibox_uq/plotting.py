"""Figures for experiment reports.

Uses the object-oriented matplotlib API with the Agg canvas, so nothing here
touches pyplot state or needs a display.
"""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from PIL import Image as PILImage

from .errors import IoFailure
from .imaging import as_raster

MODE_COLORS = {"everything": "#9e9e9e", "box": "#4c72b0", "multibox": "#c44e52"}


def colorize(values, cmap: str = "viridis", vmax: float | None = None) -> np.ndarray:
    """Map ``[0, vmax]`` linearly onto a colormap; returns uint8 RGB.

    ``vmax`` defaults to the map's maximum. An all-zero map renders as the
    colormap's low end.
    """
    v = as_raster(values)
    top = float(v.max()) if vmax is None else float(vmax)
    scaled = np.clip(v / top, 0.0, 1.0) if top > 0 else np.zeros_like(v)
    rgba = colormaps[cmap](scaled, bytes=True)
    return np.ascontiguousarray(rgba[..., :3])


def save_colormap_png(values, path, cmap: str = "viridis", vmax: float | None = None) -> None:
    try:
        PILImage.fromarray(colorize(values, cmap, vmax), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _save(fig: Figure, path):
    FigureCanvasAgg(fig)
    try:
        fig.savefig(path, dpi=120, metadata={"Software": None})
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def plot_aggregate(cells, path, metrics=("dice", "ece")) -> None:
    """Grouped bars of mean metrics, one group per degradation setting.

    ``cells`` is a list of dicts with ``degradation``, ``mode`` and metric keys.
    """
    degs = list(dict.fromkeys(c["degradation"] for c in cells))
    modes = list(dict.fromkeys(c["mode"] for c in cells))
    lookup = {(c["degradation"], c["mode"]): c for c in cells}
    fig = Figure(figsize=(3.2 * len(metrics), 3.0), layout="constrained")
    axes = fig.subplots(1, len(metrics), squeeze=False)[0]
    x = np.arange(len(degs))
    width = 0.8 / max(1, len(modes))
    for ax, metric in zip(axes, metrics):
        for k, mode in enumerate(modes):
            ys = [lookup[(d, mode)][metric] if (d, mode) in lookup else np.nan for d in degs]
            ax.bar(x + (k - (len(modes) - 1) / 2) * width, ys, width,
                   label=mode, color=MODE_COLORS.get(mode))
        ax.set_xticks(x, degs, fontsize=8)
        ax.set_title(metric.upper() if metric != "dice" else "Dice", fontsize=10)
        if metric == "dice":
            lo = np.nanmin([c["dice"] for c in cells])
            ax.set_ylim(max(0.0, lo - 0.05), 1.0)
        ax.grid(axis="y", alpha=0.3)
    axes[0].legend(fontsize=8, frameon=False)
    _save(fig, path)


def plot_uncertainty_panel(image_rgb, fused, entropy, gt, path) -> None:
    """Image, fused prediction and predictive entropy side by side, gt outlined."""
    fig = Figure(figsize=(9.0, 3.2), layout="constrained")
    axes = fig.subplots(1, 3)
    axes[0].imshow(np.clip(image_rgb, 0, 1) if image_rgb.shape[-1] == 3 else image_rgb[..., 0],
                   cmap=None if image_rgb.shape[-1] == 3 else "gray")
    axes[0].set_title("input", fontsize=10)
    axes[1].imshow(fused, cmap="gray", vmin=0, vmax=1)
    axes[1].set_title("fused", fontsize=10)
    im = axes[2].imshow(entropy, cmap="viridis", vmin=0)
    axes[2].set_title("predictive entropy (bits)", fontsize=10)
    fig.colorbar(im, ax=axes[2], shrink=0.8)
    for ax in axes:
        ax.contour(gt, levels=[0.5], colors="w", linewidths=0.6)
        ax.set_axis_off()
    _save(fig, path)
