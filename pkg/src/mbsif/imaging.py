"""Raster types, pixel I/O and elementary geometry shared by the whole pipeline.

Pixel addressing convention, used everywhere in this package: a pixel is
(x, y) with x the column and y the row; arrays are stored row-major, so
``pixels[y, x]`` is the value at (x, y). Images are immutable after
construction (the backing arrays are marked read-only) and safe to share
across parallel workers.

Interchange format is binary PGM (P5, maxval 255), which round-trips
bit-exactly. 8-bit grayscale PNG is accepted read-only for convenience.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageIOError(Exception):
    """Raised when an image file cannot be read or written."""

    def __init__(self, path, reason: str):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{path}: {reason}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale raster, shape (height, width), row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"GrayImage expects a 2-D array, got ndim={px.ndim}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"GrayImage dimensions must be >= 1, got {px.shape}")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) and px.min() >= 0 and px.max() <= 255:
                px = px.astype(np.uint8)
            else:
                raise ValueError(f"GrayImage requires uint8 data, got {px.dtype}")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class FloatImage:
    """Real-valued raster used for filter responses and normalized strips."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"FloatImage expects a 2-D array, got ndim={px.ndim}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"FloatImage dimensions must be >= 1, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("FloatImage values must be finite")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Circle:
    """Circle with sub-pixel center (cx, cy) and radius r >= 0."""

    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not (np.isfinite(self.cx) and np.isfinite(self.cy) and np.isfinite(self.r)):
            raise ValueError("Circle parameters must be finite")
        if self.r < 0:
            raise ValueError(f"Circle radius must be >= 0, got {self.r}")


@dataclass(frozen=True)
class BitMask:
    """Boolean raster, True = occluded. Dimensions match the image it annotates."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError(f"BitMask expects a 2-D array, got ndim={b.ndim}")
        if b.dtype != np.bool_:
            b = b.astype(bool)
        object.__setattr__(self, "bits", _freeze(b))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


# ---------------------------------------------------------------------------
# PGM / PNG I/O
# ---------------------------------------------------------------------------

def _read_pgm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Return the next header token, skipping whitespace and '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in b" \t\r\n":
        pos += 1
    return buf[start:pos], pos


def load_gray(path) -> GrayImage:
    """Load a binary PGM (P5, maxval 255) or 8-bit grayscale PNG.

    Pixel values are preserved bit-exactly; dimensions follow the file
    header (width x height, never transposed).
    """
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ImageIOError(path, f"cannot read file ({exc})") from exc

    if raw[:2] == b"P5":
        return _parse_pgm(raw, path)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _parse_png(p, path)
    raise ImageIOError(path, "not a binary PGM (P5) or PNG file")


def _parse_pgm(raw: bytes, path) -> GrayImage:
    tok, pos = _read_pgm_token(raw, 0)
    if tok != b"P5":
        raise ImageIOError(path, f"unsupported PNM magic {tok!r}")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_pgm_token(raw, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageIOError(path, f"malformed header: bad {name} token {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageIOError(path, f"malformed header: dimensions {width}x{height}")
    if maxval != 255:
        raise ImageIOError(path, f"unsupported bit depth: maxval {maxval} (only 255)")
    pos += 1  # single whitespace byte after maxval
    data = raw[pos:pos + width * height]
    if len(data) != width * height:
        raise ImageIOError(path, f"truncated pixel data: expected {width * height} bytes, got {len(data)}")
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels)


def _parse_png(p: Path, path) -> GrayImage:
    from PIL import Image

    try:
        with Image.open(p) as im:
            if im.mode != "L":
                raise ImageIOError(path, f"unsupported PNG mode {im.mode!r} (need 8-bit grayscale 'L')")
            pixels = np.asarray(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except Exception as exc:
        raise ImageIOError(path, f"cannot decode PNG ({exc})") from exc
    return GrayImage(pixels)


def save_gray(image: GrayImage, path) -> None:
    """Write a binary PGM (P5, maxval 255); re-loads to an identical image."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + image.pixels.tobytes())
    except OSError as exc:
        raise ImageIOError(path, f"cannot write file ({exc})") from exc


def save_gray16(values: np.ndarray, path) -> None:
    """Write a 16-bit binary PGM (maxval 65535, big-endian samples).

    Used to dump code images with more than 8 bits for visual inspection.
    """
    vals = np.asarray(values)
    if vals.ndim != 2:
        raise ValueError("save_gray16 expects a 2-D array")
    if vals.min() < 0 or vals.max() > 65535:
        raise ValueError("save_gray16 values must lie in [0, 65535]")
    header = f"P5\n{vals.shape[1]} {vals.shape[0]}\n65535\n".encode("ascii")
    body = vals.astype(">u2").tobytes()
    try:
        Path(path).write_bytes(header + body)
    except OSError as exc:
        raise ImageIOError(path, f"cannot write file ({exc})") from exc


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def bilinear_sample(image: GrayImage, x: float, y: float) -> float:
    """Bilinear interpolation of the four neighbors of (x, y).

    Requires 0 <= x <= width-1 and 0 <= y <= height-1; callers that want
    edge behavior must clamp explicitly. At integer coordinates the result
    equals the pixel value exactly.
    """
    w, h = image.width, image.height
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise ValueError(f"sample point ({x}, {y}) outside [0, {w - 1}] x [0, {h - 1}]")
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    px = image.pixels
    top = (1.0 - fx) * px[y0, x0] + fx * px[y0, x1]
    bot = (1.0 - fx) * px[y1, x0] + fx * px[y1, x1]
    return float((1.0 - fy) * top + fy * bot)
