"""Ground-truth boxes and randomized multi-box prompts."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask

MAX_RETRIES = 16


@dataclass(frozen=True, order=True)
class BoxPrompt:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def is_valid(self, width: int, height: int) -> bool:
        return 0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height

    def validate(self, width: int, height: int) -> "BoxPrompt":
        if not self.is_valid(width, height):
            raise ValueError(f"{self} is not a valid box in a {width}x{height} image")
        return self

    def iou(self, other: "BoxPrompt") -> float:
        ix = max(0, min(self.x1, other.x1) - max(self.x0, other.x0))
        iy = max(0, min(self.y1, other.y1) - max(self.y0, other.y0))
        inter = ix * iy
        return inter / float(self.area + other.area - inter)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class PromptConfig:
    m: int = 8
    jitter_ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.jitter_ratio < 0:
            raise ValueError("jitter_ratio must be >= 0")


def gt_bounding_box(gt) -> BoxPrompt:
    """Tightest box around the foreground of a binary mask."""
    fg = np.asarray(gt) > 0
    if not fg.any():
        raise EmptyMask("ground truth has no foreground pixels")
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    return BoxPrompt(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def _round(v: float) -> int:
    return int(np.floor(v + 0.5))


def jitter_one(base: BoxPrompt, ratio: float, rng: np.random.Generator, width: int, height: int):
    """One edge-wise jittered sample, or None when it came out degenerate.

    Also reports whether clamping to the image bounds was needed.
    """
    bw, bh = base.width, base.height
    u = rng.uniform(-ratio, ratio, size=4)
    raw = (
        _round(base.x0 + u[0] * bw),
        _round(base.y0 + u[1] * bh),
        _round(base.x1 + u[2] * bw),
        _round(base.y1 + u[3] * bh),
    )
    x0, y0 = max(0, raw[0]), max(0, raw[1])
    x1, y1 = min(width, raw[2]), min(height, raw[3])
    clamped = (x0, y0, x1, y1) != raw
    if x0 >= x1 or y0 >= y1:
        return None, clamped
    return BoxPrompt(x0, y0, x1, y1), clamped


def jitter_boxes(base: BoxPrompt, cfg: PromptConfig, width: int, height: int) -> list[BoxPrompt]:
    """Sample ``cfg.m`` boxes by displacing each edge of ``base`` independently.

    Each edge moves by ``u * side`` with ``u ~ U(-jitter_ratio, jitter_ratio)``.
    Prompt ``i`` draws from its own stream seeded by ``(seed, i)``.
    """
    base.validate(width, height)
    if cfg.jitter_ratio == 0:
        return [base] * cfg.m
    boxes = []
    for i in range(cfg.m):
        rng = np.random.default_rng([cfg.seed, i])
        for _ in range(MAX_RETRIES):
            box, _clamped = jitter_one(base, cfg.jitter_ratio, rng, width, height)
            if box is not None:
                break
        else:
            box = base
        boxes.append(box)
    return boxes


def write_boxes_csv(boxes, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for b in boxes:
            writer.writerow(b.as_tuple())


def read_boxes_csv(path) -> list[BoxPrompt]:
    with open(path, newline="") as fh:
        return [BoxPrompt(*map(int, row)) for row in csv.reader(fh) if row]
