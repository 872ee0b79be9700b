"""Segmentation quality metrics: Dice, ECE, S-measure and weighted F-measure.

All accumulations run in float64. ``prob`` arguments are probability maps in
[0, 1]; ``gt`` arguments are {0, 1} masks of the same shape.

S-measure follows Fan et al. (ICCV 2017) and the weighted F-measure follows
Margolin et al. (CVPR 2014), both as in their authors' reference MATLAB code
(1-based centroid, sample standard deviations, 7x7 Gaussian with sigma 5).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate
from scipy.spatial import cKDTree

from .imaging import as_binary_mask, as_probability_map, check_same_shape

EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class MetricReport:
    dice: float
    ece: float
    sm: float
    wfm: float

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not np.isfinite(v) or not -1e-12 <= v <= 1 + 1e-12:
                raise ValueError(f"{name}={v} is outside [0, 1]")

    def as_dict(self, ndigits: int | None = None) -> dict:
        d = asdict(self)
        if ndigits is not None:
            d = {k: round(v, ndigits) for k, v in d.items()}
        return d


def _pair(prob, gt):
    p = as_probability_map(prob)
    g = as_binary_mask(gt)
    check_same_shape(p, g)
    return p, g


# ---------------------------------------------------------------------- Dice

def dice(pred, gt) -> float:
    """``2|P & G| / (|P| + |G|)``; 1.0 when both masks are empty."""
    p = as_binary_mask(pred)
    g = as_binary_mask(gt)
    check_same_shape(p, g)
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * (p * g).sum() / denom)


# ----------------------------------------------------------------------- ECE

def ece(prob, gt, n_bins: int = 10) -> float:
    """Expected calibration error over pixel-wise binary predictions.

    Confidence is ``max(p, 1 - p)``, binned into ``n_bins`` equal-width bins
    over (0.5, 1]; a confidence of exactly 0.5 falls into the first bin.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    p, g = _pair(prob, gt)
    p, g = p.ravel(), g.ravel()
    conf = np.maximum(p, 1.0 - p)
    correct = ((p >= 0.5) == (g == 1.0)).astype(np.float64)
    edges = 0.5 + 0.5 * np.arange(n_bins + 1) / n_bins
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    nz = counts > 0
    gaps = np.abs(acc_sum[nz] - conf_sum[nz]) / counts[nz]
    return float(np.sum(counts[nz] / p.size * gaps))


# ----------------------------------------------------------------- S-measure

def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    fg = g == 1.0
    o_fg = _object_score(np.where(fg, p, 0.0)[fg])
    o_bg = _object_score(np.where(fg, 0.0, 1.0 - p)[~fg])
    u = fg.mean()
    return u * o_fg + (1.0 - u) * o_bg


def _centroid(g: np.ndarray) -> tuple[int, int]:
    rows, cols = g.shape
    total = g.sum()
    if total == 0:
        return int(np.floor(cols / 2 + 0.5)), int(np.floor(rows / 2 + 0.5))
    i = np.arange(1, cols + 1, dtype=np.float64)
    j = np.arange(1, rows + 1, dtype=np.float64)
    x = np.floor(np.dot(g.sum(axis=0), i) / total + 0.5)
    y = np.floor(np.dot(g.sum(axis=1), j) / total + 0.5)
    return int(x), int(y)


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    dx, dy = p - x, g - y
    denom = n - 1 + EPS
    sx2 = np.sum(dx * dx) / denom
    sy2 = np.sum(dy * dy) / denom
    sxy = np.sum(dx * dy) / denom
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx2 + sy2)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    cx, cy = _centroid(g)
    area = float(h * w)
    blocks = [
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ]
    w1 = cx * cy / area
    w2 = (w - cx) * cy / area
    w3 = cx * (h - cy) / area
    weights = (w1, w2, w3, 1.0 - w1 - w2 - w3)
    return sum(wt * _ssim(p[blk], g[blk]) for wt, blk in zip(weights, blocks) if wt > 0)


def s_measure(prob, gt, alpha: float = 0.5) -> float:
    """Structure measure combining object- and region-aware similarity."""
    p, g = _pair(prob, gt)
    mu = g.mean()
    if mu == 0:
        return float(1.0 - p.mean())
    if mu == 1:
        return float(p.mean())
    q = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return float(max(q, 0.0))


# -------------------------------------------------------- weighted F-measure

def gaussian_kernel2d(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2.0
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return k / k.sum()


def nearest_foreground(fg: np.ndarray, k: int = 16):
    """Euclidean distance to, and flat index of, the nearest foreground pixel.

    Ties go to the lowest row-major index. Foreground pixels map to themselves.
    """
    h, w = fg.shape
    fg_flat = np.flatnonzero(fg.ravel())
    coords = np.column_stack(np.unravel_index(fg_flat, fg.shape))
    dist = np.zeros(fg.size)
    nearest = np.arange(fg.size)
    bg_flat = np.flatnonzero(~fg.ravel())
    if bg_flat.size == 0:
        return dist.reshape(h, w), nearest.reshape(h, w)
    bg_coords = np.column_stack(np.unravel_index(bg_flat, fg.shape))
    kk = min(k, fg_flat.size)
    tree = cKDTree(coords)
    _, cand = tree.query(bg_coords, k=kk)
    cand = cand.reshape(len(bg_flat), kk)
    # integer squared distances make the tie test exact
    diff = coords[cand] - bg_coords[:, None, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    dmin = d2.min(axis=1)
    tied = d2 == dmin[:, None]
    flat_cand = fg_flat[cand]
    best = np.where(tied, flat_cand, np.iinfo(np.int64).max).min(axis=1)
    # when every queried neighbour ties, more may lie beyond the k-th: recheck
    for row in np.flatnonzero(tied.all(axis=1) & (kk < fg_flat.size)):
        all_d2 = np.sum((coords - bg_coords[row]) ** 2, axis=1)
        best[row] = fg_flat[np.flatnonzero(all_d2 == all_d2.min())[0]]
    dist[bg_flat] = np.sqrt(dmin)
    nearest[bg_flat] = best
    return dist.reshape(h, w), nearest.reshape(h, w)


def weighted_fmeasure(prob, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure of a soft foreground map against a binary mask."""
    p, g = _pair(prob, gt)
    fg = g == 1.0
    if not fg.any():
        return 1.0 if not p.any() else 0.0
    err = np.abs(p - g)
    dist, nearest = nearest_foreground(fg)
    # background pixels inherit the error of their nearest foreground pixel
    err_t = err.ravel()[nearest.ravel()].reshape(err.shape)
    err_a = correlate(err_t, gaussian_kernel2d(), mode="constant", cval=0.0)
    min_e = np.where(fg & (err_a < err), err_a, err)
    importance = np.where(fg, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e * importance
    tp_w = fg.sum() - ew[fg].sum()
    fp_w = ew[~fg].sum()
    recall = 1.0 - ew[fg].mean()
    precision = tp_w / (tp_w + fp_w) if tp_w + fp_w != 0 else 0.0
    denom = beta2 * precision + recall
    if denom == 0:
        return 0.0
    return float(np.clip((1.0 + beta2) * precision * recall / denom, 0.0, 1.0))


def evaluate(prob, gt, threshold: float = 0.5, n_bins: int = 10) -> MetricReport:
    p, g = _pair(prob, gt)
    pred = (p >= threshold).astype(np.float64)
    return MetricReport(
        dice=dice(pred, g),
        ece=ece(p, g, n_bins=n_bins),
        sm=s_measure(p, g),
        wfm=weighted_fmeasure(p, g),
    )
