"""Subject-disjoint evaluation protocol and the size x bits grid runner.

The protocol: split subjects (never samples) 80/20 per gender, select one
image per subject per eye by seeded draw, run 5-fold cross-validation on
the training subjects for parameter selection, then train once on the full
training side and evaluate once on the held-out side. Every emitted result
keeps the per-class correct counts alongside the accuracy.

Grid runs are resumable: each configuration is keyed by a hash of its
canonical description, finished rows are loaded from the output CSV and
skipped, and the final file is rewritten in lexicographic config order so
identical inputs produce identical bytes (pass timing=False to zero out
the wall-time column, which is otherwise the one nondeterministic field).
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classifiers as clf
from .encoder import PRESETS, FeatureVector, encode, full_image_feature, histogram_feature
from .filter_learning import FilterBank, learn_filterbank, load_filterbank
from .imaging import BitMask, Circle, FloatImage, GrayImage, load_gray
from .normalization import (DEFAULT_ANGULAR, DEFAULT_RADIAL, IrisAnnotation,
                            NormalizedIris, apply_mask_zero, rubber_sheet)
from .synth import MANIFEST_FIELDS

RESULT_FIELDS = [
    "config_hash", "padding", "filter_size", "bits", "feature_kind",
    "classifier", "eye", "accuracy", "male_correct", "male_total",
    "female_correct", "female_total", "seconds",
]

GENDERS = ("male", "female")
EYES = ("left", "right")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    subject_id: str
    eye: str
    gender: str
    image_path: str
    mask_path: str
    pupil: Circle
    iris: Circle

    @property
    def prenormalized(self) -> bool:
        """Rows with zero-radius circles are already-normalized strips."""
        return self.pupil.r == 0 and self.iris.r == 0


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    source_name: str = ""

    def __post_init__(self):
        genders: dict[str, str] = {}
        ids = set()
        for e in self.entries:
            if e.sample_id in ids:
                raise ValueError(f"duplicate sample_id {e.sample_id!r}")
            ids.add(e.sample_id)
            if e.gender not in GENDERS:
                raise ValueError(f"gender must be male/female, got {e.gender!r}")
            if e.eye not in EYES:
                raise ValueError(f"eye must be left/right, got {e.eye!r}")
            prev = genders.setdefault(e.subject_id, e.gender)
            if prev != e.gender:
                raise ValueError(f"subject {e.subject_id!r} has inconsistent gender")

    def subjects_by_gender(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {g: [] for g in GENDERS}
        seen = set()
        for e in self.entries:
            if e.subject_id not in seen:
                seen.add(e.subject_id)
                out[e.gender].append(e.subject_id)
        for g in GENDERS:
            out[g].sort()
        return out

    def for_eye(self, eye: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.eye == eye]


def load_manifest(path, source_name: str = "") -> DatasetManifest:
    """Read the manifest CSV; relative paths resolve against its directory."""
    base = Path(path).parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest missing columns {sorted(missing)}")
        for rec in reader:
            img = rec["image_path"]
            msk = rec["mask_path"]
            entries.append(ManifestEntry(
                sample_id=rec["sample_id"],
                subject_id=rec["subject_id"],
                eye=rec["eye"],
                gender=rec["gender"],
                image_path=str(base / img) if not Path(img).is_absolute() else img,
                mask_path=str(base / msk) if not Path(msk).is_absolute() else msk,
                pupil=Circle(float(rec["pupil_cx"]), float(rec["pupil_cy"]), float(rec["pupil_r"])),
                iris=Circle(float(rec["iris_cx"]), float(rec["iris_cy"]), float(rec["iris_r"])),
            ))
    return DatasetManifest(entries=tuple(entries), source_name=source_name or str(path))


# ---------------------------------------------------------------------------
# Split plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    train_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]
    folds: tuple[tuple[str, ...], ...]
    seed: int

    def __post_init__(self):
        train = set(self.train_subjects)
        if train & set(self.test_subjects):
            raise ValueError("train and test subjects must be disjoint")
        covered: set[str] = set()
        for f in self.folds:
            fs = set(f)
            if fs & covered:
                raise ValueError("folds must be disjoint")
            if not fs <= train:
                raise ValueError("folds must partition the training subjects")
            covered |= fs
        if self.folds and covered != train:
            raise ValueError("folds must cover all training subjects")


def make_split(manifest: DatasetManifest, train_fraction: float = 0.8,
               seed: int = 0, n_folds: int = 5) -> SplitPlan:
    """Stratified subject-level split plus an even fold partition of train.

    Per gender, round(train_fraction * n) subjects go to train; the train
    subjects are dealt round-robin into `n_folds` folds, so fold sizes
    differ by at most one. Deterministic for a fixed seed.
    """
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must be in (0, 1)")
    by_gender = manifest.subjects_by_gender()
    for g in GENDERS:
        if len(by_gender[g]) < 10:
            raise ValueError(f"need at least 10 {g} subjects, got {len(by_gender[g])}")
    rng = np.random.default_rng(seed)
    train: list[str] = []
    test: list[str] = []
    for g in GENDERS:
        subjects = list(by_gender[g])
        rng.shuffle(subjects)
        n_train = int(train_fraction * len(subjects) + 0.5)
        train.extend(subjects[:n_train])
        test.extend(subjects[n_train:])
    folds: list[list[str]] = [[] for _ in range(n_folds)]
    for i, s in enumerate(train):
        folds[i % n_folds].append(s)
    return SplitPlan(train_subjects=tuple(train), test_subjects=tuple(test),
                     folds=tuple(tuple(f) for f in folds), seed=seed)


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    eye: str = "left"
    padding: str = "modified"           # preset name, see encoder.PRESETS
    filter_size: int = 11
    bits: int = 8
    feature_kind: str = "histogram"     # histogram | full_image
    classifier: str = "adaboost"        # adaboost | logitboost | forest
    histogram_mode: str = "mask_zeroed"
    rounds: int = 100
    trees: int = 500
    max_depth: int | None = None
    seed: int = 0
    bank_path: str | None = None        # pre-trained bank; else trained on the fly
    corpus_size: int = 13               # training images for on-the-fly banks
    patch_count: int = 50000
    n_radii: int = DEFAULT_RADIAL
    n_angles: int = DEFAULT_ANGULAR

    def __post_init__(self):
        if self.padding not in PRESETS:
            raise ValueError(f"padding preset must be one of {sorted(PRESETS)}")
        if self.feature_kind not in ("histogram", "full_image"):
            raise ValueError("feature_kind must be histogram or full_image")
        if self.classifier not in ("adaboost", "logitboost", "forest"):
            raise ValueError("classifier must be adaboost, logitboost or forest")
        if self.eye not in EYES:
            raise ValueError("eye must be left or right")

    def key(self) -> str:
        """Canonical descriptor; the sort key and hash input for grid rows."""
        depth = "none" if self.max_depth is None else str(self.max_depth)
        bank = self.bank_path or "auto"
        return (f"eye={self.eye}|padding={self.padding}|size={self.filter_size}"
                f"|bits={self.bits}|feature={self.feature_kind}|clf={self.classifier}"
                f"|hist={self.histogram_mode}|rounds={self.rounds}|trees={self.trees}"
                f"|depth={depth}|seed={self.seed}|bank={bank}"
                f"|corpus={self.corpus_size}|patches={self.patch_count}"
                f"|R={self.n_radii}|T={self.n_angles}")

    def hash(self) -> str:
        return hashlib.sha256(self.key().encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class GridSpec:
    filter_sizes: tuple[int, ...] = (5, 7, 9, 11, 13, 15, 17)
    bits: tuple[int, ...] = (5, 6, 7, 8, 9, 10, 11, 12)
    feature_kinds: tuple[str, ...] = ("histogram",)
    paddings: tuple[str, ...] = ("modified",)
    classifier_names: tuple[str, ...] = ("adaboost",)
    eyes: tuple[str, ...] = ("left",)
    base: ExperimentConfig = field(default_factory=ExperimentConfig)

    def configs(self) -> list[ExperimentConfig]:
        out = []
        for eye in self.eyes:
            for padding in self.paddings:
                for size in self.filter_sizes:
                    for bits in self.bits:
                        for kind in self.feature_kinds:
                            for name in self.classifier_names:
                                out.append(replace(self.base, eye=eye, padding=padding,
                                                   filter_size=size, bits=bits,
                                                   feature_kind=kind, classifier=name))
        return sorted(out, key=lambda c: c.key())


@dataclass(frozen=True)
class ResultRecord:
    config: ExperimentConfig
    accuracy: float
    male_correct: int
    male_total: int
    female_correct: int
    female_total: int
    train_size: int
    test_size: int
    seconds: float

    def csv_row(self, timing: bool = True) -> list[str]:
        c = self.config
        return [c.hash(), c.padding, str(c.filter_size), str(c.bits), c.feature_kind,
                c.classifier, c.eye, f"{self.accuracy:.10g}",
                str(self.male_correct), str(self.male_total),
                str(self.female_correct), str(self.female_total),
                f"{self.seconds:.3f}" if timing else "0.000"]


# ---------------------------------------------------------------------------
# Sample loading and feature assembly
# ---------------------------------------------------------------------------

def load_normalized(entry: ManifestEntry, n_radii: int = DEFAULT_RADIAL,
                    n_angles: int = DEFAULT_ANGULAR) -> NormalizedIris:
    """Normalize a manifest entry (or load it directly if pre-normalized)."""
    image = load_gray(entry.image_path)
    mask_img = load_gray(entry.mask_path)
    if entry.prenormalized:
        return NormalizedIris(
            strip=FloatImage(image.pixels.astype(np.float64)),
            mask=BitMask(mask_img.pixels >= 128),
            source_id=entry.sample_id, eye=entry.eye, gender_label=entry.gender,
        )
    ann = IrisAnnotation(pupil=entry.pupil, iris=entry.iris,
                         occlusion=BitMask(mask_img.pixels >= 128))
    return rubber_sheet(image, ann, n_radii, n_angles,
                        source_id=entry.sample_id, eye=entry.eye,
                        gender_label=entry.gender)


def select_one_per_subject(entries: list[ManifestEntry], seed: int) -> list[ManifestEntry]:
    """One sample per subject, drawn with the given seed (subjects in sorted order)."""
    groups: dict[str, list[ManifestEntry]] = {}
    for e in entries:
        groups.setdefault(e.subject_id, []).append(e)
    rng = np.random.default_rng(seed)
    chosen = []
    for sid in sorted(groups):
        samples = sorted(groups[sid], key=lambda e: e.sample_id)
        chosen.append(samples[int(rng.integers(0, len(samples)))])
    return chosen


def compute_feature(entry: ManifestEntry, bank: FilterBank,
                    config: ExperimentConfig) -> FeatureVector:
    """normalize -> zero masked pixels -> encode -> feature, for one sample."""
    norm = load_normalized(entry, config.n_radii, config.n_angles)
    norm = apply_mask_zero(norm)
    code = encode(norm.strip, norm.mask, bank, PRESETS[config.padding])
    if config.feature_kind == "histogram":
        return histogram_feature(code, mode=config.histogram_mode,
                                 label=norm.gender_label,
                                 source_id=norm.source_id, eye=norm.eye)
    return full_image_feature(code, label=norm.gender_label,
                              source_id=norm.source_id, eye=norm.eye)


def _dataset_from(entries: list[ManifestEntry], bank: FilterBank,
                  config: ExperimentConfig) -> clf.LabeledDataset:
    feats = [compute_feature(e, bank, config) for e in entries]
    X = np.stack([f.values for f in feats])
    y = np.array([1.0 if e.gender == "male" else -1.0 for e in entries])
    return clf.LabeledDataset(features=X, labels=y,
                              subject_ids=tuple(e.subject_id for e in entries))


def _bank_for(config: ExperimentConfig, train_entries: list[ManifestEntry]) -> FilterBank:
    if config.bank_path:
        bank = load_filterbank(config.bank_path)
        if bank.size != config.filter_size or bank.bits != config.bits:
            raise ValueError(
                f"bank {config.bank_path} is {bank.size}x{bank.size}/{bank.bits} bits, "
                f"config wants {config.filter_size}/{config.bits}")
        return bank
    corpus = sorted(train_entries, key=lambda e: e.sample_id)[:config.corpus_size]
    if not corpus:
        raise ValueError("no training images available for filter learning")
    images = [load_gray(e.image_path) for e in corpus]
    return learn_filterbank(images, config.filter_size, config.bits,
                            m=config.patch_count, seed=config.seed, source="eye",
                            description=f"trained on {len(images)} corpus images")


def _fit(config: ExperimentConfig, data: clf.LabeledDataset):
    if config.classifier == "adaboost":
        return clf.fit_adaboost(data, rounds=config.rounds)
    if config.classifier == "logitboost":
        return clf.fit_logitboost(data, rounds=config.rounds)
    return clf.fit_forest(data, trees=config.trees, max_depth=config.max_depth,
                          seed=config.seed)


def _evaluate(manifest: DatasetManifest, train_subjects: set[str],
              eval_subjects: set[str], config: ExperimentConfig) -> ResultRecord:
    start = time.perf_counter()
    entries = manifest.for_eye(config.eye)
    selected = select_one_per_subject(entries, seed=config.seed)
    train_entries = [e for e in selected if e.subject_id in train_subjects]
    eval_entries = [e for e in selected if e.subject_id in eval_subjects]
    if not train_entries or not eval_entries:
        raise ValueError("empty train or evaluation set for this configuration")

    bank = _bank_for(config, train_entries)
    train_data = _dataset_from(train_entries, bank, config)
    eval_data = _dataset_from(eval_entries, bank, config)
    model = _fit(config, train_data)
    pred = clf.predict_batch(model, eval_data.features)

    y = eval_data.labels
    male = y > 0
    male_correct = int(np.sum((pred == y) & male))
    female_correct = int(np.sum((pred == y) & ~male))
    male_total = int(np.sum(male))
    female_total = int(np.sum(~male))
    accuracy = (male_correct + female_correct) / (male_total + female_total)
    return ResultRecord(config=config, accuracy=accuracy,
                        male_correct=male_correct, male_total=male_total,
                        female_correct=female_correct, female_total=female_total,
                        train_size=len(train_entries), test_size=len(eval_entries),
                        seconds=time.perf_counter() - start)


def run_config(manifest: DatasetManifest, split: SplitPlan,
               config: ExperimentConfig) -> ResultRecord:
    """Train on the full training side, evaluate once on the held-out side."""
    return _evaluate(manifest, set(split.train_subjects), set(split.test_subjects), config)


def cross_validate(manifest: DatasetManifest, split: SplitPlan,
                   config: ExperimentConfig) -> tuple[float, float, list[float]]:
    """5-fold CV over the training subjects; returns (mean, std, per-fold)."""
    accs = []
    for i, fold in enumerate(split.folds):
        val = set(fold)
        train = set(split.train_subjects) - val
        rec = _evaluate(manifest, train, val, config)
        accs.append(rec.accuracy)
    mean = float(np.mean(accs))
    std = float(np.std(accs))
    return mean, std, accs


# ---------------------------------------------------------------------------
# Grid runner
# ---------------------------------------------------------------------------

def _run_task(args) -> tuple[str, ResultRecord]:
    manifest, split, config = args
    return config.hash(), run_config(manifest, split, config)


def _read_existing_rows(path: Path) -> dict[str, list[str]]:
    rows: dict[str, list[str]] = {}
    if not path.exists():
        return rows
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        for rec in reader:
            if not rec or rec[0] == "config_hash":
                continue
            rows[rec[0]] = rec
    return rows


def run_grid(manifest: DatasetManifest, split: SplitPlan, grid: GridSpec,
             out_csv, jobs: int = 1, timing: bool = True,
             provenance: str | None = None,
             log=None) -> list[ResultRecord]:
    """Run every grid configuration, append-as-you-go, rewrite sorted at the end.

    Completed configurations already present in `out_csv` are skipped, so
    an interrupted run resumes where it stopped and still produces the
    same final file. Per-config failures go to `<out_csv>.errors.csv` and
    do not stop the run.
    """
    out_path = Path(out_csv)
    configs = grid.configs()
    by_hash = {c.hash(): c for c in configs}
    existing = _read_existing_rows(out_path)
    todo = [c for c in configs if c.hash() not in existing]

    new_header = not out_path.exists()
    records: list[ResultRecord] = []
    failures: list[tuple[str, str]] = []
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_header:
            if provenance:
                fh.write(f"# {provenance}\n")
            writer.writerow(RESULT_FIELDS)
            fh.flush()

        def finish(h: str, rec: ResultRecord):
            records.append(rec)
            row = rec.csv_row(timing=timing)
            existing[h] = row
            writer.writerow(row)
            fh.flush()
            if log:
                log(f"[{len(existing)}/{len(configs)}] {rec.config.key()} acc={rec.accuracy:.4f}")

        if jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {pool.submit(_run_task, (manifest, split, c)): c for c in todo}
                for fut, c in futures.items():
                    try:
                        h, rec = fut.result()
                        finish(h, rec)
                    except Exception as exc:
                        failures.append((c.key(), f"{type(exc).__name__}: {exc}"))
                        if log:
                            log(f"FAILED {c.key()}: {exc}")
        else:
            for c in todo:
                try:
                    finish(c.hash(), run_config(manifest, split, c))
                except Exception as exc:
                    failures.append((c.key(), f"{type(exc).__name__}: {exc}"))
                    if log:
                        log(f"FAILED {c.key()}: {exc}")

    if failures:
        err_path = out_path.with_suffix(out_path.suffix + ".errors.csv")
        with open(err_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config_key", "error"])
            w.writerows(failures)

    # final rewrite: stable lexicographic config-key order, current grid only
    ordered = [existing[c.hash()] for c in configs if c.hash() in existing]
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    w = csv.writer(buf)
    w.writerow(RESULT_FIELDS)
    w.writerows(ordered)
    out_path.write_text(buf.getvalue())
    return records


def best_config(rows: list[ResultRecord]) -> ResultRecord:
    """Highest accuracy; ties prefer fewer bits, then smaller filters."""
    if not rows:
        raise ValueError("no results to choose from")
    return min(rows, key=lambda r: (-r.accuracy, r.config.bits, r.config.filter_size,
                                    r.config.key()))
