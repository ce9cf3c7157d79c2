"""Filter responses, binarized code images and feature vectors.

The boundary policy is the load-bearing piece here. Convolving an l x l
filter with a 20 x 240 strip needs (l-1)/2 extra rows and columns on every
side, and *where those come from* decides whether the code image carries
real texture or artifacts imported from across the image. The policy is a
pair of per-axis modes; the two presets of interest:

    TRADITIONAL -- wrap both axes: the top band is a copy of the bottom
        rows (and vice versa), which drags the occluded/zeroed region of a
        masked strip onto the opposite boundary.
    MODIFIED    -- replicate radially, wrap angularly: top/bottom rows are
        repeated outward, while the angular axis stays wrapped because a
        polar strip is physically periodic in theta.

REPLICATE_FULL (replicate both axes) is provided for ablations.

Responses are cross-correlations (no kernel flip): for learned filters the
flip is an arbitrary relabeling, so one orientation is fixed and stated.
Bit i of the code is 1 iff response_i > 0 (strictly), and the code is
sum_i bit_i * 2^(i-1), giving the canonical range [0, 2^n - 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import BitMask, FloatImage, save_gray, save_gray16, GrayImage
from .filter_learning import FilterBank

PAD_MODES = ("wrap", "replicate", "zero", "reflect")
_NP_PAD_MODE = {"wrap": "wrap", "replicate": "edge", "zero": "constant", "reflect": "reflect"}


@dataclass(frozen=True)
class PaddingStrategy:
    """Per-axis boundary modes; radial = rows (top/bottom), angular = columns."""

    radial: str
    angular: str

    def __post_init__(self):
        for axis, mode in (("radial", self.radial), ("angular", self.angular)):
            if mode not in PAD_MODES:
                raise ValueError(f"{axis} mode must be one of {PAD_MODES}, got {mode!r}")


TRADITIONAL = PaddingStrategy(radial="wrap", angular="wrap")
MODIFIED = PaddingStrategy(radial="replicate", angular="wrap")
REPLICATE_FULL = PaddingStrategy(radial="replicate", angular="replicate")

PRESETS = {
    "traditional": TRADITIONAL,
    "modified": MODIFIED,
    "replicate": REPLICATE_FULL,
}


@dataclass(frozen=True)
class ResponseStack:
    """Per-filter response maps, shape (bits, height, width); all finite."""

    responses: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.responses, dtype=np.float64)
        if r.ndim != 3:
            raise ValueError(f"responses must be (bits, h, w), got shape {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("responses must be finite")
        object.__setattr__(self, "responses", r)

    @property
    def bits(self) -> int:
        return self.responses.shape[0]

    def response(self, i: int) -> FloatImage:
        return FloatImage(self.responses[i])


@dataclass(frozen=True)
class CodeImage:
    """Per-pixel integer codes in [0, 2^bits - 1] with the propagated mask."""

    bits: int
    codes: np.ndarray  # (height, width) int32
    mask: BitMask

    def __post_init__(self):
        c = np.asarray(self.codes)
        if c.ndim != 2:
            raise ValueError("codes must be a 2-D array")
        if not np.issubdtype(c.dtype, np.integer):
            raise ValueError("codes must be integers")
        c = c.astype(np.int32)
        if c.min() < 0 or c.max() > (1 << self.bits) - 1:
            raise ValueError(f"codes must lie in [0, {(1 << self.bits) - 1}]")
        if c.shape != (self.mask.height, self.mask.width):
            raise ValueError("mask dims must equal code dims")
        object.__setattr__(self, "codes", _readonly(c))

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    @property
    def height(self) -> int:
        return self.codes.shape[0]


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FeatureVector:
    """Flattened code image or normalized code histogram, plus label metadata."""

    kind: str  # "full_image" | "histogram"
    values: np.ndarray
    label: str = "unknown"
    source_id: str = ""
    eye: str = "unknown"

    def __post_init__(self):
        if self.kind not in ("full_image", "histogram"):
            raise ValueError(f"kind must be 'full_image' or 'histogram', got {self.kind!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("feature values must be a 1-D vector")
        if self.kind == "histogram":
            if v.min() < 0 or abs(v.sum() - 1.0) > 1e-9:
                raise ValueError("histogram features must be non-negative and sum to 1")
        object.__setattr__(self, "values", _readonly(v))


# ---------------------------------------------------------------------------
# Padding
# ---------------------------------------------------------------------------

def pad_image(strip: FloatImage, l: int, p: PaddingStrategy) -> FloatImage:
    """Grow the strip by k = (l-1)/2 on every side according to the policy.

    The angular rule is applied first (left/right columns), then the radial
    rule extends top/bottom over the widened image, so corners see the
    angular rule first. l = 1 is the identity.
    """
    if l % 2 == 0:
        raise ValueError(f"filter size must be odd, got {l}")
    k = (l - 1) // 2
    if k == 0:
        return strip
    h, w = strip.height, strip.width
    for axis_name, mode, dim in (("angular", p.angular, w), ("radial", p.radial, h)):
        if mode == "reflect" and k > dim - 1:
            raise ValueError(f"{axis_name} reflect padding needs k <= {dim - 1}, got {k}")
        if mode == "wrap" and k > dim:
            raise ValueError(f"{axis_name} wrap padding needs k <= {dim}, got {k}")
    out = np.pad(strip.pixels, ((0, 0), (k, k)), mode=_NP_PAD_MODE[p.angular])
    out = np.pad(out, ((k, k), (0, 0)), mode=_NP_PAD_MODE[p.radial])
    return FloatImage(out)


# ---------------------------------------------------------------------------
# Responses and codes
# ---------------------------------------------------------------------------

def filter_responses(strip: FloatImage, bank: FilterBank, p: PaddingStrategy) -> ResponseStack:
    """Cross-correlate every filter with the padded strip, cropped to input dims.

    response_i(x, y) = sum_{u,v} W_i(u, v) * padded(y+u, x+v); all filters
    are evaluated in one matrix product over the window view.
    """
    l = bank.size
    padded = pad_image(strip, l, p).pixels
    h, w = strip.height, strip.width
    windows = sliding_window_view(padded, (l, l))          # (h, w, l, l)
    flat = windows.reshape(h * w, l * l)
    responses = (flat @ bank.weights.T).T.reshape(bank.bits, h, w)
    return ResponseStack(responses=responses)


def encode(strip: FloatImage, mask: BitMask, bank: FilterBank, p: PaddingStrategy) -> CodeImage:
    """Binarize responses at a strict zero threshold and stack the bits.

    code(x, y) = sum_i [response_i(x, y) > 0] * 2^(i-1); a response of
    exactly 0 contributes bit 0. The mask is copied through unchanged.
    """
    if (mask.height, mask.width) != (strip.height, strip.width):
        raise ValueError("mask dims must equal strip dims")
    stack = filter_responses(strip, bank, p)
    powers = (1 << np.arange(bank.bits, dtype=np.int64))
    codes = np.tensordot(powers, (stack.responses > 0).astype(np.int64), axes=(0, 0))
    return CodeImage(bits=bank.bits, codes=codes.astype(np.int32), mask=mask)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def histogram_feature(code: CodeImage, mode: str = "mask_zeroed",
                      label: str = "unknown", source_id: str = "",
                      eye: str = "unknown") -> FeatureVector:
    """L1-normalized histogram over the 2^bits code values.

    mask_zeroed counts every pixel (the zeroed-strip convention: masked
    pixels were zeroed upstream and their codes still count); mask_excluded
    drops pixels where the mask is set and errors on empty support.
    """
    if mode not in ("mask_zeroed", "mask_excluded"):
        raise ValueError(f"mode must be 'mask_zeroed' or 'mask_excluded', got {mode!r}")
    if mode == "mask_excluded":
        values = code.codes[~code.mask.bits]
        if values.size == 0:
            raise ValueError("all pixels are masked: histogram support is empty")
    else:
        values = code.codes.ravel()
    counts = np.bincount(values, minlength=1 << code.bits).astype(np.float64)
    hist = counts / counts.sum()
    return FeatureVector(kind="histogram", values=hist, label=label,
                         source_id=source_id, eye=eye)


def full_image_feature(code: CodeImage, label: str = "unknown",
                       source_id: str = "", eye: str = "unknown") -> FeatureVector:
    """Row-major flattening of the code image as reals."""
    return FeatureVector(kind="full_image", values=code.codes.ravel().astype(np.float64),
                         label=label, source_id=source_id, eye=eye)


# ---------------------------------------------------------------------------
# Code-image dumps (visual inspection)
# ---------------------------------------------------------------------------

def save_code_image(code: CodeImage, path) -> None:
    """Dump codes as 8-bit PGM when bits <= 8, else 16-bit PGM (bits <= 16)."""
    if code.bits <= 8:
        save_gray(GrayImage(code.codes.astype(np.uint8)), path)
    else:
        save_gray16(code.codes, path)


# ---------------------------------------------------------------------------
# Feature CSV interchange
# ---------------------------------------------------------------------------

def write_features_csv(features: list[FeatureVector], path, provenance: str | None = None) -> None:
    """Write features: header row, then sample_id, eye, gender, kind, v0..vk.

    Values are printed with 17 significant digits, so float64 round-trips
    exactly. An optional '# ...' provenance line precedes the header.
    """
    import csv

    if not features:
        raise ValueError("no features to write")
    k = len(features[0].values)
    if any(len(f.values) != k for f in features):
        raise ValueError("all feature vectors must have the same length")
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "eye", "gender", "kind"] + [f"v{i}" for i in range(k)])
        for f in features:
            writer.writerow([f.source_id, f.eye, f.label, f.kind]
                            + [f"{float(v):.17g}" for v in f.values])


def read_features_csv(path) -> list[FeatureVector]:
    """Read a CSV written by write_features_csv."""
    import csv

    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if not header or header[:4] != ["sample_id", "eye", "gender", "kind"]:
            raise ValueError(f"{path}: not a feature CSV (bad header)")
        for rec in reader:
            if not rec:
                continue
            values = np.array([float(v) for v in rec[4:]], dtype=np.float64)
            out.append(FeatureVector(kind=rec[3], values=values, label=rec[2],
                                     source_id=rec[0], eye=rec[1]))
    return out
