"""Raster data model and file I/O.

Images are float arrays in [0, 1] with an explicit channel axis, ``(H, W, C)``
with ``C`` in {1, 3}. Single-channel maps (probabilities, masks, uncertainty)
are plain 2-D float arrays; the helpers below validate them at module
boundaries.

Supported files: 8-bit PNG (via Pillow), binary PGM (P5) and the ``PMAP``
float32 raster used to exchange probability maps with external backends::

    b"PMAP" | u32 LE width | u32 LE height | width*height float32 LE, row-major
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import (
    BadMagic,
    CorruptHeader,
    DimensionMismatch,
    IoFailure,
    MissingFile,
    UnsupportedFormat,
)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
PMAP_MAGIC = b"PMAP"
LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R BT.601


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable float image with values in [0, 1].

    ``data`` always has shape ``(height, width, channels)``.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("image must be non-empty")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        if arr is self.data:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape2d(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def plane(self) -> np.ndarray:
        """The single channel of a grayscale image as a 2-D array."""
        if self.channels != 1:
            raise ValueError("plane() requires a single-channel image")
        return self.data[:, :, 0]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def as_raster(arr) -> np.ndarray:
    r = np.asarray(arr, dtype=np.float64)
    if r.ndim != 2:
        raise ValueError(f"raster must be 2-D, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("raster contains non-finite values")
    return r


def as_probability_map(arr) -> np.ndarray:
    p = as_raster(arr)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("probability map values must lie in [0, 1]")
    return p


def as_binary_mask(arr) -> np.ndarray:
    """Validate a {0, 1} raster; booleans are accepted and converted."""
    m = np.asarray(arr)
    if m.dtype == bool:
        return m.astype(np.float64)
    m = as_raster(m)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("binary mask values must be exactly 0 or 1")
    return m


def check_same_shape(a: np.ndarray, b: np.ndarray, what="rasters"):
    if a.shape != b.shape:
        raise DimensionMismatch(f"{what} differ in shape: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- conversion

def to_gray(img: Image) -> Image:
    if img.channels == 1:
        return img
    # integer per-mille weights: white stays exactly 1.0, red exactly 0.299
    w = np.round(np.asarray(LUMA_WEIGHTS) * 1000.0)
    gray = (img.data @ w) / 1000.0
    return Image(np.clip(gray, 0.0, 1.0))


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 with round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


# ----------------------------------------------------------------- 8-bit I/O

def _read_bytes(path) -> bytes:
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _parse_pgm(raw: bytes) -> np.ndarray:
    pos = 2
    fields = []
    n = len(raw)
    while len(fields) < 3:
        while pos < n and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos:pos + 1] == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptHeader("malformed PGM header")
        fields.append(int(raw[start:pos]))
    if pos >= n or not raw[pos:pos + 1].isspace():
        raise CorruptHeader("malformed PGM header")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise CorruptHeader("PGM dimensions must be positive")
    if not 0 < maxval < 256:
        raise UnsupportedFormat(f"only 8-bit PGM is supported (maxval={maxval})")
    payload = raw[pos:pos + width * height]
    if len(payload) != width * height:
        raise CorruptHeader(
            f"PGM payload truncated: expected {width * height} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return data.astype(np.float64) / float(maxval)


def _parse_png(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise UnsupportedFormat(f"only 8-bit PNG is supported (mode {mode})")
            if mode in ("1", "L", "LA"):
                im = im.convert("L")
            elif mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnsupportedFormat:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptHeader(f"unreadable PNG {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def load_image(path) -> Image:
    """Load an 8-bit PNG or binary PGM, mapping bytes to ``v / 255``."""
    raw = _read_bytes(path)
    if raw.startswith(PNG_SIGNATURE):
        return Image(_parse_png(path))
    if raw.startswith(b"P5"):
        return Image(_parse_pgm(raw))
    raise UnsupportedFormat(f"{path}: not a PNG or binary PGM file")


def load_mask(path) -> np.ndarray:
    """Load a ground-truth mask, thresholding at 0.5 after the /255 mapping."""
    gray = to_gray(load_image(path)).plane()
    return (gray >= 0.5).astype(np.float64)


def save_image(img: Image | np.ndarray, path) -> None:
    """Write an 8-bit PNG (grayscale or RGB)."""
    if not isinstance(img, Image):
        img = Image(img)
    q = quantize(img.data)
    pil = PILImage.fromarray(q[:, :, 0], mode="L") if img.channels == 1 else PILImage.fromarray(q, mode="RGB")
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def save_pgm(img: Image | np.ndarray, path) -> None:
    """Write a binary PGM (P5, maxval 255); RGB input is converted to gray."""
    if not isinstance(img, Image):
        img = Image(img)
    q = quantize(to_gray(img).plane())
    header = f"P5\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header + q.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# ----------------------------------------------------------------- PMAP I/O

def encode_raster_f32(r) -> bytes:
    r = as_raster(r)
    h, w = r.shape
    return PMAP_MAGIC + struct.pack("<II", w, h) + r.astype("<f4").tobytes()


def decode_raster_f32(raw: bytes) -> np.ndarray:
    if raw[:4] != PMAP_MAGIC:
        raise BadMagic(f"expected PMAP magic, got {raw[:4]!r}")
    if len(raw) < 12:
        raise DimensionMismatch("PMAP header truncated")
    w, h = struct.unpack("<II", raw[4:12])
    payload = raw[12:]
    if len(payload) != 4 * w * h:
        raise DimensionMismatch(
            f"PMAP header says {w}x{h} ({w * h} floats) but payload holds {len(payload) / 4:g}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)


def save_raster_f32(r, path) -> None:
    data = encode_raster_f32(r)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_raster_f32(path) -> np.ndarray:
    """Read a PMAP file into a float32 ``(height, width)`` array."""
    if not os.path.isfile(path):
        raise IoFailure(f"no such file: {path}")
    return decode_raster_f32(_read_bytes(path))
