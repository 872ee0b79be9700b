"""Fundus-like synthetic images with optic-disc masks."""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import Image, save_image, save_pgm


def synth_fundus(size: int, rng: np.random.Generator) -> tuple[Image, np.ndarray]:
    """One RGB fundus-like image and its disc mask (disc and cup merged)."""
    h = w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    c = (size - 1) / 2.0
    r_field = 0.48 * size
    rr = np.hypot(xs - c, ys - c)
    field_mask = rr <= r_field

    # reddish background with radial falloff and smooth mottling
    shade = 0.75 - 0.35 * (rr / r_field) ** 2
    mottle = gaussian_filter(rng.normal(0.0, 1.0, (h, w)), 0.06 * size)
    mottle /= np.abs(mottle).max() + 1e-12
    base = np.clip(shade + 0.06 * mottle, 0.0, 1.0)
    rgb = np.stack([0.85 * base, 0.45 * base, 0.2 * base], axis=-1)

    # optic disc: bright ellipse placed off-centre, as in a real fundus
    angle = rng.uniform(0, 2 * np.pi)
    dist = rng.uniform(0.1, 0.2) * size
    dcx, dcy = c + dist * np.cos(angle), c + dist * np.sin(angle)
    a = rng.uniform(0.11, 0.15) * size
    b = a * rng.uniform(0.85, 1.1)
    theta = rng.uniform(0, np.pi)
    u = (xs - dcx) * np.cos(theta) + (ys - dcy) * np.sin(theta)
    v = -(xs - dcx) * np.sin(theta) + (ys - dcy) * np.cos(theta)
    ell = (u / a) ** 2 + (v / b) ** 2
    disc = ell <= 1.0
    cup = ell <= rng.uniform(0.25, 0.4)

    soft_disc = gaussian_filter(disc.astype(np.float64), 1.2)
    soft_cup = gaussian_filter(cup.astype(np.float64), 1.5)
    disc_rgb = np.array([0.95, 0.8, 0.5])
    cup_rgb = np.array([1.0, 0.95, 0.8])
    rgb = rgb * (1 - soft_disc[..., None]) + disc_rgb * soft_disc[..., None]
    rgb = rgb * (1 - 0.6 * soft_cup[..., None]) + cup_rgb * 0.6 * soft_cup[..., None]

    # vessels: a few dark random-walk curves leaving the disc
    vessels = np.zeros((h, w))
    for _ in range(rng.integers(4, 7)):
        px, py = dcx, dcy
        heading = rng.uniform(0, 2 * np.pi)
        for _ in range(int(0.8 * size)):
            heading += rng.normal(0.0, 0.08)
            px += np.cos(heading)
            py += np.sin(heading)
            ix, iy = int(round(px)), int(round(py))
            if not (0 <= ix < w and 0 <= iy < h):
                break
            vessels[iy, ix] = 1.0
    vessels = np.clip(gaussian_filter(vessels, 0.8) * 2.5, 0.0, 1.0)
    rgb = rgb * (1 - 0.45 * vessels[..., None])

    # fine grain, as in any camera image
    rgb = rgb + rng.normal(0.0, 0.015, rgb.shape)
    rgb = np.where(field_mask[..., None], rgb, 0.02)
    return Image(np.clip(rgb, 0.0, 1.0)), disc.astype(np.float64)


def generate_dataset(out_dir, n: int = 20, size: int = 128, seed: int = 7) -> list[str]:
    """Write ``<stem>.png`` + ``<stem>_mask.pgm`` pairs; returns the stems."""
    os.makedirs(out_dir, exist_ok=True)
    stems = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        img, mask = synth_fundus(size, rng)
        stem = f"synth_{i:03d}"
        save_image(img, os.path.join(out_dir, f"{stem}.png"))
        save_pgm(mask, os.path.join(out_dir, f"{stem}_mask.pgm"))
        stems.append(stem)
    return stems
