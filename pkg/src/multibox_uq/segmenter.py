"""Segmenter backends and ground-truth-guided mask selection.

A backend is anything with two methods::

    predict(image, box) -> 2-D probability map
    predict_everything(image) -> non-empty list of 2-D probability maps

``SyntheticOracle`` is a self-contained stand-in that derives predictions from
a hidden ground truth. ``ExternalBackend`` talks to a separate process
(typically wrapping a real promptable model) over a line protocol on its
stdin/stdout; see :mod:`multibox_uq.protocol`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter, zoom

from .degradation import gaussian_blur
from .errors import DimensionMismatch, EmptyCandidateList
from .fusion import binarize
from .imaging import Image, as_binary_mask, as_probability_map, to_gray
from .metrics import dice
from .prompts import BoxPrompt

N_EVERYTHING = 4
SHIFT_GRID = 4
WINDOW_DILATION = 0.05
DISTRACTOR_MAX_DICE = 0.3


class SegmenterBackend(Protocol):
    def predict(self, image: Image, box: BoxPrompt) -> np.ndarray: ...

    def predict_everything(self, image: Image) -> list[np.ndarray]: ...


@dataclass(frozen=True)
class MaskSelection:
    index: int
    dice: float
    all_scores: tuple[float, ...]


def select_best_mask(candidates: Sequence, gt, threshold: float = 0.5) -> MaskSelection:
    """Pick the candidate whose binarized mask has the highest Dice vs ``gt``.

    This uses the ground truth, so it is an evaluation protocol for the
    unprompted mode rather than a deployable prediction. Ties go to the
    lowest index.
    """
    if len(candidates) == 0:
        raise EmptyCandidateList("no candidate masks to select from")
    g = as_binary_mask(gt)
    scores = []
    for c in candidates:
        c = as_probability_map(c)
        if c.shape != g.shape:
            raise DimensionMismatch(f"candidate shape {c.shape} != ground truth {g.shape}")
        scores.append(dice(binarize(c, threshold), g))
    best = int(np.argmax(scores))
    return MaskSelection(best, scores[best], tuple(scores))


# ------------------------------------------------------------ synthetic oracle

def degradation_level(image: Image) -> float:
    """Mean absolute high-frequency residual of the grayscale image."""
    gray = to_gray(image).plane()
    return float(np.mean(np.abs(gray - gaussian_filter(gray, 1.0, mode="reflect"))))


def box_window(shape, box: BoxPrompt, dilation: float = WINDOW_DILATION) -> np.ndarray:
    h, w = shape
    dx, dy = dilation * box.width, dilation * box.height
    xs = np.arange(w)
    ys = np.arange(h)
    inx = (xs >= box.x0 - dx) & (xs < box.x1 + dx)
    iny = (ys >= box.y0 - dy) & (ys < box.y1 + dy)
    return (iny[:, None] & inx[None, :]).astype(np.float64)


@dataclass(frozen=True, eq=False)
class OracleConfig:
    """Parameters of :class:`SyntheticOracle`.

    Setting ``shift_common = shift_prompt = 0``, ``looseness=False`` and
    ``binary=False`` reduces the oracle to plain
    ``clamp(blur(gt) * window + gain * q * eta, 0, 1)``.
    """

    gt: np.ndarray
    blur_sigma: float = 1.5
    gain: float = 4.0
    seed: int = 0
    # boundary error in pixels shared by every prompt on this image
    shift_common: float = 1.0
    # boundary error in pixels drawn afresh for each prompt
    shift_prompt: float = 1.0
    # scale shifts and noise by sqrt(box area / gt box area) for looser boxes
    looseness: bool = True
    # emit binary masks, thresholded at 0.5, as the real model does
    binary: bool = True

    def __post_init__(self):
        g = as_binary_mask(self.gt).copy()
        g.setflags(write=False)
        object.__setattr__(self, "gt", g)


def smooth_field(rng: np.random.Generator, shape, grid: int = SHIFT_GRID) -> np.ndarray:
    """Smooth random field in [-1, 1]: a coarse uniform grid upsampled cubically."""
    h, w = shape
    coarse = rng.uniform(-1.0, 1.0, size=(grid, grid))
    up = zoom(coarse, (h / grid, w / grid), order=3, mode="nearest")
    out = np.zeros(shape)
    out[: min(h, up.shape[0]), : min(w, up.shape[1])] = up[:h, :w]
    return np.clip(out, -1.0, 1.0)


@dataclass(eq=False)
class SyntheticOracle:
    """Stand-in for a promptable segmenter, driven by a hidden ground truth.

    For a box ``b`` the prediction is::

        p_b = clamp(blur(gt_b) * window(b) + gain * q * L_b * eta_b, 0, 1)

    thresholded at 0.5 when ``binary`` is set. ``window(b)`` is 1 inside the
    box dilated by 5% of its sides; ``q`` is the input's degradation level;
    ``eta_b`` is uniform noise in [-0.5, 0.5]; ``gt_b`` is the ground truth
    with its boundary moved in or out by ``L_b * (shift_common * c + shift_prompt * f_b)``
    pixels, ``c`` and ``f_b`` being smooth fields in [-1, 1]. ``c`` is fixed per
    oracle while ``f_b`` and ``eta_b`` are seeded from ``(seed, box)``, so
    different prompts disagree and repeated calls agree bit for bit.
    ``L_b = sqrt(max(1, area(b) / area(gt box)))`` makes loose prompts worse.
    """

    cfg: OracleConfig
    _sdf: np.ndarray = field(init=False, repr=False)
    _common: np.ndarray = field(init=False, repr=False)
    _gt_box_area: int = field(init=False, repr=False)

    def __post_init__(self):
        fg = self.cfg.gt > 0
        # signed distance with the zero level between boundary pixels
        self._sdf = np.where(
            fg, distance_transform_edt(fg) - 0.5, 0.5 - distance_transform_edt(~fg)
        )
        self._common = smooth_field(np.random.default_rng([self.cfg.seed, 0xC0]), fg.shape)
        if fg.any():
            rows = np.flatnonzero(fg.any(axis=1))
            cols = np.flatnonzero(fg.any(axis=0))
            self._gt_box_area = int((rows[-1] - rows[0] + 1) * (cols[-1] - cols[0] + 1))
        else:
            self._gt_box_area = fg.size

    def _check(self, image: Image):
        if image.shape2d != self.cfg.gt.shape:
            raise DimensionMismatch(f"image {image.shape2d} vs oracle ground truth {self.cfg.gt.shape}")

    def looseness(self, box: BoxPrompt) -> float:
        if not self.cfg.looseness:
            return 1.0
        return float(np.sqrt(max(1.0, box.area / self._gt_box_area)))

    def noise_gain(self, image: Image, box: BoxPrompt) -> float:
        return self.cfg.gain * degradation_level(image) * self.looseness(box)

    def _object(self, box: BoxPrompt) -> np.ndarray:
        cfg = self.cfg
        if cfg.shift_common == 0 and cfg.shift_prompt == 0:
            return cfg.gt
        shift = cfg.shift_common * self._common
        if cfg.shift_prompt:
            rng = np.random.default_rng([cfg.seed, *box.as_tuple(), 1])
            shift = shift + cfg.shift_prompt * smooth_field(rng, cfg.gt.shape)
        return (self._sdf + self.looseness(box) * shift > 0).astype(np.float64)

    def predict(self, image: Image, box: BoxPrompt) -> np.ndarray:
        self._check(image)
        box.validate(image.width, image.height)
        soft = gaussian_blur(self._object(box), self.cfg.blur_sigma)
        signal = soft * box_window(self.cfg.gt.shape, box)
        rng = np.random.default_rng([self.cfg.seed, *box.as_tuple()])
        eta = rng.uniform(-0.5, 0.5, size=signal.shape)
        p = np.clip(signal + self.noise_gain(image, box) * eta, 0.0, 1.0)
        if self.cfg.binary:
            p = (p >= 0.5).astype(np.float64)
        return p

    def predict_everything(self, image: Image) -> list[np.ndarray]:
        self._check(image)
        h, w = image.shape2d
        cands = [self.predict(image, BoxPrompt(0, 0, w, h))]
        rng = np.random.default_rng([self.cfg.seed, 0xE7])
        while len(cands) < N_EVERYTHING:
            cands.append(self._distractor(rng))
        return cands

    def _distractor(self, rng: np.random.Generator) -> np.ndarray:
        gt = self.cfg.gt
        h, w = gt.shape
        ys, xs = np.mgrid[0:h, 0:w]
        size = min(h, w)
        for _ in range(32):
            cx, cy = rng.uniform(0.1, 0.9, size=2) * (w, h)
            blob = np.zeros((h, w), dtype=bool)
            for _ in range(3):
                ox, oy = rng.normal(0.0, 0.04 * size, size=2)
                r = rng.uniform(0.04, 0.1) * size
                blob |= (xs - cx - ox) ** 2 + (ys - cy - oy) ** 2 <= r * r
            if blob.any() and dice(blob, gt) < DISTRACTOR_MAX_DICE:
                break
        else:
            # corner farthest from the ground-truth centroid
            gy, gx = np.argwhere(gt > 0).mean(axis=0) if gt.any() else (0.0, 0.0)
            cx = 0.1 * w if gx > w / 2 else 0.9 * w
            cy = 0.1 * h if gy > h / 2 else 0.9 * h
            blob = (xs - cx) ** 2 + (ys - cy) ** 2 <= (0.05 * size) ** 2
        return np.clip(0.95 * gaussian_blur(blob.astype(np.float64), 1.0), 0.0, 1.0)
