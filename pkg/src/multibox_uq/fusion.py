"""Fusing per-prompt predictions into one probability map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .imaging import as_probability_map


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """The M per-prompt probability maps together with their box prompts.

    ``boxes`` may be empty when the maps did not come from box prompts
    (e.g. when loaded from a directory of .pmap files).
    """

    maps: tuple
    boxes: tuple = field(default=())

    def __post_init__(self):
        maps = tuple(as_probability_map(m) for m in self.maps)
        if not maps:
            raise ValueError("a prediction set needs at least one map")
        shape = maps[0].shape
        for m in maps[1:]:
            if m.shape != shape:
                raise DimensionMismatch(f"prediction maps differ in shape: {shape} vs {m.shape}")
        boxes = tuple(self.boxes)
        if boxes and len(boxes) != len(maps):
            raise ValueError(f"{len(maps)} maps but {len(boxes)} boxes")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "boxes", boxes)

    @property
    def m(self) -> int:
        return len(self.maps)

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps[0].shape

    def stack(self) -> np.ndarray:
        return np.stack(self.maps).astype(np.float64)


def pairwise_sum(arrays) -> np.ndarray:
    """Tree-ordered sum of a sequence of equal-shape arrays, in float64."""
    items = [np.asarray(a, dtype=np.float64) for a in arrays]
    if not items:
        raise ValueError("nothing to sum")
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def sample_mean(arrays) -> np.ndarray:
    arrays = list(arrays)
    if len(arrays) == 1:
        return np.array(arrays[0], dtype=np.float64)
    return pairwise_sum(arrays) / len(arrays)


def fuse_mean(pset: PredictionSet) -> np.ndarray:
    """Per-pixel arithmetic mean over the M predictions."""
    if pset.m == 1:
        return np.array(pset.maps[0], dtype=np.float64)
    stack = pset.stack()
    # rounding can push the mean an ulp past the sample envelope
    return np.clip(sample_mean(pset.maps), stack.min(axis=0), stack.max(axis=0))


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """1 where ``prob >= threshold``, else 0."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    return (as_probability_map(prob) >= threshold).astype(np.float64)
