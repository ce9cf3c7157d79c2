"""Procedural two-class strip corpus for desk-scale experiments.

Real gender-labelled iris databases are restricted-access, so the
experiment harness ships with a generator that produces already-normalized
strips with a known class-conditional texture. Each strip has three radial
zones:

  rows 0..1            a thin grating against the pupil-side boundary whose
                       angular frequency encodes the class;
  rows 2..6            a quiet band of weak band-limited noise;
  rows 7..end          a deep, strong band-limited "junk" zone (random
                       per-sample spectrum overlapping the class band),
                       partially zeroed by an eyelid-like occlusion sector
                       and specular specks.

The layout is deliberate: the only windows that read the class cleanly are
the ones straddling the pupil-side boundary. Replicate padding extends the
signal rows outward and keeps those windows clean; wrap padding copies the
junk zone (mask holes included) onto them, drowning the class signal, and
any interior window deep enough to see the signal rows also contains
enough junk to be unreliable. That makes the boundary policy the deciding
factor for end-to-end accuracy, which is exactly what the harness needs to
demonstrate.

Every sample is generated from its own generator spawned from
(seed, subject index, eye index), so the corpus is reproducible and
independent of generation order.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .imaging import GrayImage, save_gray

# class-conditional grating frequencies (cycles per strip width)
FREQ_MALE = 10.0
FREQ_FEMALE = 25.0
SIGNAL_ROWS = 2          # class grating depth at the pupil-side boundary
QUIET_ROWS = 5           # weak-noise buffer between signal and junk
GRATING_AMP = 25.0
QUIET_AMP = 15.0
JUNK_AMP = 100.0         # junk must dominate any window it appears in
PIXEL_NOISE = 6.0
NOISE_BAND = (5.0, 35.0)  # junk/quiet spectra overlap the class band

MANIFEST_FIELDS = [
    "sample_id", "subject_id", "eye", "gender", "image_path", "mask_path",
    "pupil_cx", "pupil_cy", "pupil_r", "iris_cx", "iris_cy", "iris_r",
]


def _band_noise(rng: np.random.Generator, n_angles: int, amp: float,
                components: int = 8) -> np.ndarray:
    """Random sum of sinusoids inside NOISE_BAND with total power amp^2 / 2."""
    freqs = rng.uniform(NOISE_BAND[0], NOISE_BAND[1], components)
    phases = rng.uniform(0.0, 2.0 * np.pi, components)
    weights = rng.uniform(0.5, 1.0, components)
    weights = weights / np.sqrt(np.sum(weights ** 2)) * amp
    cols = np.arange(n_angles)
    out = np.zeros(n_angles)
    for a, f, p in zip(weights, freqs, phases):
        out += a * np.sin(2.0 * np.pi * f * cols / n_angles + p)
    return out


def make_strip(rng: np.random.Generator, gender: str, n_radii: int = 20,
               n_angles: int = 240) -> tuple[np.ndarray, np.ndarray]:
    """One (strip, mask) pair; strip uint8, mask bool (True = occluded)."""
    freq = FREQ_MALE if gender == "male" else FREQ_FEMALE
    freq = freq * (1.0 + rng.uniform(-0.05, 0.05))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = GRATING_AMP * (1.0 + rng.uniform(-0.1, 0.1))

    strip = np.full((n_radii, n_angles), 128.0)
    cols = np.arange(n_angles)
    grating = amp * np.sin(2.0 * np.pi * freq * cols / n_angles + phase)
    sig = min(SIGNAL_ROWS, n_radii)
    quiet_end = min(SIGNAL_ROWS + QUIET_ROWS, n_radii)
    strip[:sig] += grating[None, :]
    if quiet_end > sig:
        strip[sig:quiet_end] += _band_noise(rng, n_angles, QUIET_AMP)[None, :]
    if n_radii > quiet_end:
        strip[quiet_end:] += _band_noise(rng, n_angles, JUNK_AMP)[None, :]
    strip += PIXEL_NOISE * rng.standard_normal((n_radii, n_angles))
    strip = np.clip(np.rint(strip), 0, 255).astype(np.uint8)

    mask = np.zeros((n_radii, n_angles), dtype=bool)
    # eyelid-like sector over the outer (sclera-side) rows
    start = int(rng.integers(0, n_angles))
    width = int(rng.integers(60, 141))
    depth = int(rng.integers(4, 10))
    sector = (cols - start) % n_angles < width
    mask[max(n_radii - depth, 0):, sector] = True
    if rng.random() < 0.5:
        start2 = int(rng.integers(0, n_angles))
        width2 = int(rng.integers(20, 61))
        depth2 = int(rng.integers(3, 7))
        sector2 = (cols - start2) % n_angles < width2
        mask[max(n_radii - depth2, 0):, sector2] = True
    # specular-highlight specks
    for _ in range(int(rng.integers(2, 7))):
        r = int(rng.integers(0, max(n_radii - 1, 1)))
        c = int(rng.integers(0, max(n_angles - 1, 1)))
        mask[r:r + 2, c:c + 2] = True
    return strip, mask


def generate_corpus(out_dir, subjects: int = 400, seed: int = 0,
                    n_radii: int = 20, n_angles: int = 240,
                    eyes: tuple[str, ...] = ("left", "right")) -> Path:
    """Write strips, masks and a manifest CSV under `out_dir`.

    One strip per subject per eye; the first half of the subjects is male.
    Rows use pupil_r = iris_r = 0 to mark the images as already-normalized
    strips (no rubber-sheet step needed). Returns the manifest path.
    """
    if subjects < 2:
        raise ValueError("need at least 2 subjects")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    rows = []
    for s in range(subjects):
        gender = "male" if s < subjects // 2 else "female"
        subject_id = f"S{s:04d}"
        for e, eye in enumerate(eyes):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(s, e)))
            strip, mask = make_strip(rng, gender, n_radii, n_angles)
            sample_id = f"{subject_id}_{eye}"
            image_rel = f"images/{sample_id}.pgm"
            mask_rel = f"masks/{sample_id}_mask.pgm"
            save_gray(GrayImage(strip), out / image_rel)
            save_gray(GrayImage(np.where(mask, 255, 0).astype(np.uint8)), out / mask_rel)
            rows.append([sample_id, subject_id, eye, gender, image_rel, mask_rel,
                         0, 0, 0, 0, 0, 0])

    manifest_path = out / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)
    return manifest_path
