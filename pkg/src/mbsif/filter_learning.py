"""Learning linear texture filter banks from image patches.

The bank is the product of two stages: PCA whitening of mean-removed
patches (top-n principal directions scaled to unit variance) followed by
symmetric fixed-point ICA with a tanh contrast. Stacking the n estimated
independent directions against the whitening projection yields an
n x l^2 weight matrix; each row, reshaped to l x l, is one filter.

Everything is seeded through numpy's PCG64 generator so a bank is fully
reproducible from (corpus, l, n, m, seed).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import GrayImage

BANK_MAGIC = b"MBSIFB01"
_SOURCE_TAGS = {"natural": 0, "eye": 1, "custom": 2}
_TAG_SOURCES = {v: k for k, v in _SOURCE_TAGS.items()}

ICA_TOL = 1e-6
ICA_MAX_ITER = 1000


class BankFormatError(Exception):
    """Raised when a filter-bank file is corrupt, truncated or invalid."""


@dataclass(frozen=True)
class PatchMatrix:
    """m vectorized l x l patches, one per row, each with its DC removed."""

    patch_size: int
    data: np.ndarray  # (m, l*l) float64

    def __post_init__(self):
        l = self.patch_size
        if l % 2 == 0 or not (3 <= l <= 63):
            raise ValueError(f"patch size must be odd and in [3, 63], got {l}")
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != l * l:
            raise ValueError(f"patch data must be (m, {l * l}), got {d.shape}")
        if np.abs(d.mean(axis=1)).max() > 1e-9:
            raise ValueError("patch rows must have zero mean after DC removal")
        object.__setattr__(self, "data", d)

    @property
    def count(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class WhiteningTransform:
    """Centering + projection onto the top-n unit-variance principal directions."""

    mean: np.ndarray        # (l*l,)
    projection: np.ndarray  # (n, l*l)

    def apply(self, data: np.ndarray) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.mean) @ self.projection.T


@dataclass(frozen=True)
class FilterBank:
    """n learned l x l filters, stacked row-wise into an n x l^2 matrix."""

    size: int
    bits: int
    weights: np.ndarray  # (bits, size*size) float64
    source: str = "custom"
    description: str = ""
    seed: int = 0

    def __post_init__(self):
        l, n = self.size, self.bits
        if l % 2 == 0 or l < 3:
            raise ValueError(f"filter size must be odd and >= 3, got {l}")
        if not (1 <= n <= 16):
            raise ValueError(f"bits must be in [1, 16], got {n}")
        if n > l * l - 1:
            raise ValueError(f"bits ({n}) must be <= size^2 - 1 ({l * l - 1})")
        if self.source not in _SOURCE_TAGS:
            raise ValueError(f"source must be one of {sorted(_SOURCE_TAGS)}, got {self.source!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (n, l * l):
            raise ValueError(f"weights must be ({n}, {l * l}), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    def filter_2d(self, i: int) -> np.ndarray:
        """Filter i reshaped to its spatial l x l form."""
        return self.weights[i].reshape(self.size, self.size)


# ---------------------------------------------------------------------------
# Patch sampling
# ---------------------------------------------------------------------------

def sample_patches(images: list[GrayImage], l: int, m: int, seed: int) -> PatchMatrix:
    """Draw m random l x l patches (uniform over image and position), DC-removed.

    Images smaller than l x l are skipped with a warning; with no usable
    image left this is an error. Deterministic for a fixed seed.
    """
    if l % 2 == 0 or l < 3:
        raise ValueError(f"patch size must be odd and >= 3, got {l}")
    if m < 10 * l * l:
        raise ValueError(f"need at least 10*l^2 = {10 * l * l} patches, got {m}")
    usable = []
    for idx, img in enumerate(images):
        if img.width < l or img.height < l:
            warnings.warn(f"skipping image {idx}: {img.width}x{img.height} smaller than patch size {l}")
            continue
        usable.append(img.pixels.astype(np.float64))
    if not usable:
        raise ValueError("no image is large enough for the requested patch size")

    rng = np.random.default_rng(seed)
    img_idx = rng.integers(0, len(usable), size=m)
    data = np.empty((m, l * l), dtype=np.float64)
    for k in range(m):
        img = usable[img_idx[k]]
        h, w = img.shape
        y0 = int(rng.integers(0, h - l + 1))
        x0 = int(rng.integers(0, w - l + 1))
        data[k] = img[y0:y0 + l, x0:x0 + l].ravel()
    data -= data.mean(axis=1, keepdims=True)
    return PatchMatrix(patch_size=l, data=data)


# ---------------------------------------------------------------------------
# Whitening
# ---------------------------------------------------------------------------

def fit_whitening(patches: PatchMatrix | np.ndarray, n: int) -> WhiteningTransform:
    """PCA whitening onto the top-n principal directions (descending eigenvalue).

    The projection is scaled so the centered training data has unit sample
    variance (ddof=1) along each kept direction. Raises if fewer than n
    singular values exceed 1e-12 relative to the largest. Accepts either a
    PatchMatrix (n capped at l^2 - 1, since DC removal kills one direction)
    or any (m, d) data matrix.
    """
    if isinstance(patches, PatchMatrix):
        data = patches.data
        n_max = patches.patch_size ** 2 - 1
    else:
        data = np.asarray(patches, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("whitening input must be a 2-D (m, d) matrix")
        n_max = data.shape[1]
    m, d = data.shape
    if not (1 <= n <= n_max):
        raise ValueError(f"components must be in [1, {n_max}], got {n}")
    if m <= d:
        raise ValueError(f"need more than {d} samples, got {m}")

    mean = data.mean(axis=0)
    centered = data - mean
    # SVD of the centered data: covariance eigenvectors without forming X^T X.
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(svals > 1e-12 * svals[0]))
    if rank < n:
        raise ValueError(f"training data has rank {rank}, cannot whiten {n} components")
    scale = np.sqrt(m - 1) / svals[:n]
    projection = scale[:, None] * vt[:n]
    return WhiteningTransform(mean=mean, projection=projection)


# ---------------------------------------------------------------------------
# FastICA
# ---------------------------------------------------------------------------

def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    """W <- (W W^T)^{-1/2} W, making the rows exactly orthonormal."""
    evals, evecs = np.linalg.eigh(w @ w.T)
    if evals.min() <= 0:
        raise ValueError("degenerate unmixing estimate (rank-deficient W)")
    inv_sqrt = (evecs * (1.0 / np.sqrt(evals))) @ evecs.T
    return inv_sqrt @ w


def fast_ica(whitened: np.ndarray, seed: int, tol: float = ICA_TOL,
             max_iter: int = ICA_MAX_ITER) -> np.ndarray:
    """Symmetric fixed-point ICA with tanh contrast on whitened rows.

    Input rows must already have (approximately) identity sample
    covariance. Returns the n x n unmixing matrix with orthonormal rows.
    All components are updated simultaneously and re-orthonormalized each
    step, which keeps the result independent of component order and
    deterministic for a fixed seed. Non-convergence within `max_iter`
    iterations is reported as a warning, not an error.
    """
    x = np.asarray(whitened, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("whitened data must be a 2-D (m, n) matrix")
    m, n = x.shape
    cov = (x.T @ x) / (m - 1)
    if np.abs(cov - np.eye(n)).max() > 1e-3:
        raise ValueError("input rows must have identity sample covariance within 1e-3")

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((n, n)))
    for it in range(max_iter):
        y = x @ w.T                      # (m, n) projections
        g = np.tanh(y)
        g_prime = 1.0 - g * g
        w_new = (g.T @ x) / m - g_prime.mean(axis=0)[:, None] * w
        if not np.all(np.isfinite(w_new)):
            raise ValueError(f"NaN/Inf during ICA update at iteration {it}")
        w_new = _sym_decorrelate(w_new)
        delta = float(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0).max())
        w = w_new
        if delta < tol:
            return w
    warnings.warn(f"FastICA did not converge within {max_iter} iterations (delta={delta:.2e})")
    return w


# ---------------------------------------------------------------------------
# End-to-end bank learning
# ---------------------------------------------------------------------------

def learn_filterbank(images: list[GrayImage], l: int, n: int, m: int = 50000,
                     seed: int = 0, source: str = "custom",
                     description: str = "") -> FilterBank:
    """Learn an n-filter bank of size l x l from random patches of `images`.

    weights = (ICA unmixing) @ (whitening projection); the same seed drives
    patch sampling and the ICA start, so the result is bit-reproducible.
    """
    patches = sample_patches(images, l, m, seed)
    whitening = fit_whitening(patches, n)
    whitened = whitening.apply(patches.data)
    unmixing = fast_ica(whitened, seed)
    weights = unmixing @ whitening.projection
    return FilterBank(size=l, bits=n, weights=weights, source=source,
                      description=description, seed=seed)


# ---------------------------------------------------------------------------
# Serialization (bit-exact binary container)
# ---------------------------------------------------------------------------

def save_filterbank(bank: FilterBank, path) -> None:
    """Write the bank: magic, LE u32 l, u32 n, u64 seed, u32 source tag,
    u32 description length + UTF-8 bytes, then n*l^2 LE float64 row-major."""
    desc = bank.description.encode("utf-8")
    head = BANK_MAGIC + struct.pack(
        "<IIQII", bank.size, bank.bits, bank.seed, _SOURCE_TAGS[bank.source], len(desc)
    )
    body = desc + bank.weights.astype("<f8").tobytes()
    Path(path).write_bytes(head + body)


def load_filterbank(path) -> FilterBank:
    """Read a bank written by save_filterbank; lossless including metadata."""
    raw = Path(path).read_bytes()
    if len(raw) < len(BANK_MAGIC) + 24:
        raise BankFormatError(f"{path}: file too short to be a filter bank")
    if raw[:8] != BANK_MAGIC:
        raise BankFormatError(f"{path}: bad magic {raw[:8]!r} (expected {BANK_MAGIC!r})")
    l, n, seed, tag, desc_len = struct.unpack("<IIQII", raw[8:32])
    if tag not in _TAG_SOURCES:
        raise BankFormatError(f"{path}: unknown source tag {tag}")
    pos = 32
    if len(raw) < pos + desc_len:
        raise BankFormatError(f"{path}: truncated description")
    desc = raw[pos:pos + desc_len].decode("utf-8")
    pos += desc_len
    need = n * l * l * 8
    if len(raw) != pos + need:
        raise BankFormatError(
            f"{path}: expected {need} weight bytes, found {len(raw) - pos}"
        )
    weights = np.frombuffer(raw[pos:], dtype="<f8").reshape(n, l * l)
    try:
        return FilterBank(size=int(l), bits=int(n), weights=weights,
                          source=_TAG_SOURCES[tag], description=desc, seed=int(seed))
    except ValueError as exc:
        raise BankFormatError(f"{path}: invalid bank contents ({exc})") from exc
