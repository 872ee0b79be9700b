"""Low-quality variants of clean fundus images.

Two protocols are supported: additive Gaussian noise at a given standard
deviation, and a coded three-factor degradation. A code is a 3-character
string of '0'/'1' toggling (illumination, blur, noise), most significant
first, so "101" means uneven illumination plus noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .imaging import Image

STANDARD_SIGMAS = (0.05, 0.10)
STANDARD_CODES = ("101", "111")
ALL_CODES = tuple(format(i, "03b") for i in range(8))


@dataclass(frozen=True)
class DegradationCode:
    illumination: bool
    blur: bool
    noise: bool

    @classmethod
    def parse(cls, code) -> "DegradationCode":
        if isinstance(code, DegradationCode):
            return code
        if not isinstance(code, str) or len(code) != 3 or set(code) - {"0", "1"}:
            raise ValueError(f"degradation code must be 3 chars of '0'/'1', got {code!r}")
        return cls(code[0] == "1", code[1] == "1", code[2] == "1")

    def __str__(self):
        return "".join("1" if b else "0" for b in (self.illumination, self.blur, self.noise))

    @property
    def n_factors(self) -> int:
        return int(self.illumination) + int(self.blur) + int(self.noise)


@dataclass(frozen=True)
class DegradationParams:
    sigma_noise: float = 0.05
    blur_radius: float = 0.01
    illum_strength: float = 0.6
    illum_center: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma_noise < 0:
            raise ValueError("sigma_noise must be >= 0")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")
        if not 0 < self.illum_strength <= 1:
            raise ValueError("illum_strength must be in (0, 1]")
        if self.illum_center is not None:
            cx, cy = self.illum_center
            if not (0 <= cx <= 1 and 0 <= cy <= 1):
                raise ValueError("illum_center must lie in [0, 1]^2")


def add_gaussian_noise(img: Image, sigma: float, seed: int) -> Image:
    """``clamp(img + N(0, sigma^2), 0, 1)`` i.i.d. per pixel and channel."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=img.data.shape)
    return Image(np.clip(img.data + noise, 0.0, 1.0))


def gaussian_kernel1d(std: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * std)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / std) ** 2)
    return k / k.sum()


def gaussian_blur(plane: np.ndarray, std: float) -> np.ndarray:
    """Separable Gaussian blur of a 2-D array, kernel cut at 3 std.

    Outside pixels count as missing: the kernel is renormalized over the
    in-bounds taps, so constants are preserved right up to the border.
    """
    if std <= 0:
        return np.array(plane, dtype=np.float64)
    k = gaussian_kernel1d(std)
    out = np.asarray(plane, dtype=np.float64)
    norm = np.ones_like(out)
    for axis in (0, 1):
        out = correlate1d(out, k, axis=axis, mode="constant", cval=0.0)
        norm = correlate1d(norm, k, axis=axis, mode="constant", cval=0.0)
    return out / norm


def illumination_mask(height: int, width: int, strength: float, center) -> np.ndarray:
    cx, cy = center
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    d2 = (xs - cx * (width - 1)) ** 2 + (ys - cy * (height - 1)) ** 2
    spread = 0.5 * min(width, height)
    return strength + (1.0 - strength) * np.exp(-d2 / (2.0 * spread**2))


def _illum_center(params: DegradationParams):
    if params.illum_center is not None:
        return params.illum_center
    # separate stream from the noise draw so "001" matches add_gaussian_noise
    rng = np.random.default_rng([params.seed, 0x111])
    return tuple(rng.uniform(0.25, 0.75, size=2))


def degrade(img: Image, code, params: DegradationParams | None = None) -> Image:
    """Apply the enabled factors in order: illumination, blur, noise."""
    code = DegradationCode.parse(code)
    params = params or DegradationParams()
    if code.n_factors == 0:
        return img
    data = np.array(img.data, dtype=np.float64)
    h, w = img.shape2d
    if code.illumination:
        mask = illumination_mask(h, w, params.illum_strength, _illum_center(params))
        data = np.clip(data * mask[:, :, None], 0.0, 1.0)
    if code.blur:
        std = params.blur_radius * min(w, h)
        for c in range(data.shape[2]):
            data[:, :, c] = gaussian_blur(data[:, :, c], std)
        data = np.clip(data, 0.0, 1.0)
    out = Image(data)
    if code.noise:
        out = add_gaussian_noise(out, params.sigma_noise, params.seed)
    return out
