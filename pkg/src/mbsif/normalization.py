"""Rubber-sheet unwrapping of an annotated eye image into a fixed polar strip.

Geometry: each strip column j corresponds to the ray leaving the pupil
center at angle theta_j = 2*pi*j / n_angles, with theta = 0 along +x and
increasing counter-clockwise (in the standard mathematical sense; with
image y pointing down this appears clockwise on screen). Row 0 samples the
pupil boundary, row n_radii-1 the iris boundary, and rows in between
interpolate linearly between the two boundary intersections of that ray.
The circles need not be concentric.

The occlusion mask travels through the same transform with
nearest-neighbor lookup so it stays boolean; sample points that fall
outside the source image are clamped for intensity and flagged as
occluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .imaging import BitMask, Circle, FloatImage, GrayImage, bilinear_sample

DEFAULT_RADIAL = 20
DEFAULT_ANGULAR = 240


@dataclass(frozen=True)
class IrisAnnotation:
    """Segmentation output for one eye image: boundary circles + occlusion mask."""

    pupil: Circle
    iris: Circle
    occlusion: BitMask

    def __post_init__(self):
        if self.pupil.r >= self.iris.r:
            raise ValueError(
                f"pupil radius ({self.pupil.r}) must be smaller than iris radius ({self.iris.r})"
            )
        d = math.hypot(self.pupil.cx - self.iris.cx, self.pupil.cy - self.iris.cy)
        if d >= self.iris.r:
            raise ValueError("pupil center must lie inside the iris circle")


@dataclass(frozen=True)
class NormalizedIris:
    """Polar iris strip (radial x angular) with its occlusion mask and labels."""

    strip: FloatImage
    mask: BitMask
    source_id: str = ""
    eye: str = "unknown"
    gender_label: str = "unknown"

    def __post_init__(self):
        if (self.strip.height, self.strip.width) != (self.mask.height, self.mask.width):
            raise ValueError(
                f"mask dims {self.mask.height}x{self.mask.width} do not match "
                f"strip dims {self.strip.height}x{self.strip.width}"
            )
        px = self.strip.pixels
        if px.min() < 0.0 or px.max() > 255.0:
            raise ValueError("strip values must lie in [0, 255]")


def _ray_circle_exit(ox: float, oy: float, dx: float, dy: float, circle: Circle) -> float:
    """Distance along ray (origin o, unit direction d) to its exit from `circle`.

    The origin is assumed inside the circle, so the positive root exists.
    """
    ex = ox - circle.cx
    ey = oy - circle.cy
    b = ex * dx + ey * dy
    c = ex * ex + ey * ey - circle.r * circle.r
    disc = b * b - c
    if disc < 0.0:
        raise ValueError("ray does not intersect circle (origin outside?)")
    return -b + math.sqrt(disc)


def rubber_sheet(
    image: GrayImage,
    ann: IrisAnnotation,
    n_radii: int = DEFAULT_RADIAL,
    n_angles: int = DEFAULT_ANGULAR,
    source_id: str = "",
    eye: str = "unknown",
    gender_label: str = "unknown",
) -> NormalizedIris:
    """Unwrap the annular iris into an n_radii x n_angles strip.

    Output dimensions are exactly n_radii x n_angles regardless of the
    input image size. Sample points outside the image are clamped for the
    intensity lookup and marked occluded in the strip mask.
    """
    if n_radii < 1 or n_angles < 1:
        raise ValueError("n_radii and n_angles must be >= 1")
    if (ann.occlusion.height, ann.occlusion.width) != (image.height, image.width):
        raise ValueError("occlusion mask dimensions must match the image")

    w, h = image.width, image.height
    strip = np.empty((n_radii, n_angles), dtype=np.float64)
    mask = np.zeros((n_radii, n_angles), dtype=bool)
    occ = ann.occlusion.bits
    px, py = ann.pupil.cx, ann.pupil.cy

    for j in range(n_angles):
        theta = 2.0 * math.pi * j / n_angles
        dx = math.cos(theta)
        dy = math.sin(theta)
        t0 = ann.pupil.r
        t1 = _ray_circle_exit(px, py, dx, dy, ann.iris)
        for i in range(n_radii):
            alpha = i / (n_radii - 1) if n_radii > 1 else 0.0
            t = t0 + alpha * (t1 - t0)
            sx = px + t * dx
            sy = py + t * dy
            outside = not (0.0 <= sx <= w - 1 and 0.0 <= sy <= h - 1)
            cx = min(max(sx, 0.0), w - 1.0)
            cy = min(max(sy, 0.0), h - 1.0)
            strip[i, j] = bilinear_sample(image, cx, cy)
            nx = int(round(cx))
            ny = int(round(cy))
            mask[i, j] = outside or bool(occ[ny, nx])

    return NormalizedIris(
        strip=FloatImage(strip),
        mask=BitMask(mask),
        source_id=source_id,
        eye=eye,
        gender_label=gender_label,
    )


def apply_mask_zero(n: NormalizedIris) -> NormalizedIris:
    """Zero strip values wherever the mask is set; idempotent, mask unchanged."""
    out = n.strip.pixels.copy()
    out[n.mask.bits] = 0.0
    return replace(n, strip=FloatImage(out))
