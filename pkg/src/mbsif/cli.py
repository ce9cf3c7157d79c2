"""Command-line entry point for the whole pipeline.

Subcommands: learn-filters, normalize, encode, features, train, evaluate,
grid, synth-corpus, inspect. Exit codes: 0 success, 1 usage error,
2 runtime error. Diagnostics go to stderr; data goes to files or stdout.
Text artifacts start with a '# ...' provenance line carrying the tool
version, the resolved command and the seed, so the printed command
reproduces the artifact bit-exactly. MBSIF_SEED provides the default seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import classifiers as clf
from .encoder import (PRESETS, encode, read_features_csv, save_code_image,
                      write_features_csv)
from .filter_learning import learn_filterbank, load_filterbank, save_filterbank
from .harness import (EYES, ExperimentConfig, GridSpec, best_config,
                      compute_feature, load_manifest, make_split, run_grid)
from .imaging import BitMask, FloatImage, GrayImage, load_gray, save_gray
from .normalization import DEFAULT_ANGULAR, DEFAULT_RADIAL, apply_mask_zero
from .synth import MANIFEST_FIELDS, generate_corpus

IMAGE_SUFFIXES = (".pgm", ".png")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def parse_int_list(text: str) -> list[int]:
    """Comma lists and dash ranges, mixed: '5,7-9,12' -> [5, 7, 8, 9, 12]."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError(f"empty range {part!r}")
            out.extend(range(lo_i, hi_i + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"no integers in {text!r}")
    return out


def _default_seed() -> int:
    env = os.environ.get("MBSIF_SEED")
    return int(env) if env else 0


# flags that name output destinations (never change computed content) or
# that the provenance line reports separately
_NON_CONFIG_FLAGS = {"func", "command", "out", "out_dir", "dump_code", "seed"}


def _provenance(args: argparse.Namespace, seed: int) -> str:
    """Resolved config + seed, so re-running the line reproduces the bytes."""
    flags = " ".join(f"{k}={v}" for k, v in sorted(vars(args).items())
                     if k not in _NON_CONFIG_FLAGS and v is not None)
    return f"mbsif {__version__} | {args.command} | {flags} | seed={seed}"


def _corpus_images(directory: str):
    paths = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ValueError(f"no .pgm/.png images found in {directory}")
    return [load_gray(p) for p in paths]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_learn_filters(args) -> int:
    seed = args.seed
    images = _corpus_images(args.corpus)
    bank = learn_filterbank(images, args.size, args.bits, m=args.patches, seed=seed,
                            source=args.source,
                            description=args.description or f"{len(images)} images from {args.corpus}")
    save_filterbank(bank, args.out)
    _log(f"wrote {args.out}: {bank.bits} filters {bank.size}x{bank.size}, "
         f"source={bank.source}, seed={bank.seed}, corpus='{bank.description}'")
    return 0


def cmd_inspect(args) -> int:
    bank = load_filterbank(args.bank)
    w = bank.weights
    print(f"size: {bank.size}")
    print(f"bits: {bank.bits}")
    print(f"seed: {bank.seed}")
    print(f"source: {bank.source}")
    print(f"description: {bank.description}")
    print(f"weight range: [{w.min():.6g}, {w.max():.6g}]")
    print(f"weight rms: {np.sqrt(np.mean(w * w)):.6g}")
    return 0


def cmd_synth_corpus(args) -> int:
    path = generate_corpus(args.out, subjects=args.subjects, seed=args.seed,
                           n_radii=args.radial, n_angles=args.angular)
    _log(f"wrote corpus with {args.subjects} subjects to {args.out} (manifest: {path})")
    return 0


def cmd_normalize(args) -> int:
    import csv

    from .harness import load_normalized

    manifest = load_manifest(args.manifest)
    out = Path(args.out_dir)
    (out / "strips").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for entry in manifest.entries:
        norm = load_normalized(entry, args.radial, args.angular)
        strip_rel = f"strips/{entry.sample_id}.pgm"
        mask_rel = f"masks/{entry.sample_id}_mask.pgm"
        save_gray(GrayImage(np.clip(np.rint(norm.strip.pixels), 0, 255).astype(np.uint8)),
                  out / strip_rel)
        save_gray(GrayImage(np.where(norm.mask.bits, 255, 0).astype(np.uint8)),
                  out / mask_rel)
        rows.append([entry.sample_id, entry.subject_id, entry.eye, entry.gender,
                     strip_rel, mask_rel, 0, 0, 0, 0, 0, 0])
    man_path = out / "manifest.csv"
    with open(man_path, "w", newline="") as fh:
        fh.write(f"# {_provenance(args, args.seed)}\n")
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)
    _log(f"normalized {len(rows)} samples into {out} (manifest: {man_path})")
    return 0


def cmd_encode(args) -> int:
    bank = load_filterbank(args.bank)
    strip_img = load_gray(args.input)
    strip = FloatImage(strip_img.pixels.astype(np.float64))
    if args.mask:
        mask = BitMask(load_gray(args.mask).pixels >= 128)
    else:
        mask = BitMask(np.zeros((strip.height, strip.width), dtype=bool))
    if args.zero_mask:
        zeroed = strip.pixels.copy()
        zeroed[mask.bits] = 0.0
        strip = FloatImage(zeroed)
    code = encode(strip, mask, bank, PRESETS[args.padding])
    if args.dump_code:
        save_code_image(code, args.dump_code)
        _log(f"wrote code image to {args.dump_code} ({code.bits} bits)")
    return 0


def cmd_features(args) -> int:
    manifest = load_manifest(args.manifest)
    bank = load_filterbank(args.bank)
    config = ExperimentConfig(padding=args.padding, filter_size=bank.size,
                              bits=bank.bits, feature_kind=args.kind,
                              histogram_mode=args.mode, seed=args.seed,
                              n_radii=args.radial, n_angles=args.angular)
    entries = manifest.entries if args.eye == "both" else tuple(manifest.for_eye(args.eye))
    if not entries:
        raise ValueError(f"manifest has no entries for eye={args.eye}")
    feats = [compute_feature(e, bank, config) for e in entries]
    write_features_csv(feats, args.out, provenance=_provenance(args, args.seed))
    _log(f"wrote {len(feats)} feature vectors to {args.out}")
    return 0


def _dataset_from_csv(path) -> clf.LabeledDataset:
    feats = read_features_csv(path)
    labeled = [f for f in feats if f.label in ("male", "female")]
    if not labeled:
        raise ValueError(f"{path}: no labelled feature rows")
    X = np.stack([f.values for f in labeled])
    y = np.array([1.0 if f.label == "male" else -1.0 for f in labeled])
    return clf.LabeledDataset(features=X, labels=y,
                              subject_ids=tuple(f.source_id for f in labeled))


def cmd_train(args) -> int:
    data = _dataset_from_csv(args.features)
    if args.classifier == "adaboost":
        model = clf.fit_adaboost(data, rounds=args.rounds)
    elif args.classifier == "logitboost":
        model = clf.fit_logitboost(data, rounds=args.rounds)
    else:
        model = clf.fit_forest(data, trees=args.trees, max_depth=args.max_depth,
                               seed=args.seed)
    clf.save_model(model, args.out)
    _log(f"trained {args.classifier} on {data.features.shape[0]} samples "
         f"({data.features.shape[1]} features), wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    data = _dataset_from_csv(args.features)
    model = clf.load_model(args.model)
    pred = clf.predict_batch(model, data.features)
    y = data.labels
    male = y > 0
    mc = int(np.sum((pred == y) & male))
    fc = int(np.sum((pred == y) & ~male))
    mt = int(np.sum(male))
    ft = int(np.sum(~male))
    acc = (mc + fc) / (mt + ft)
    lines = [f"# {_provenance(args, args.seed)}",
             "accuracy,male_correct,male_total,female_correct,female_total",
             f"{acc:.10g},{mc},{mt},{fc},{ft}"]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        _log(f"wrote evaluation to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_grid(args) -> int:
    manifest = load_manifest(args.manifest)
    split = make_split(manifest, train_fraction=args.train_fraction, seed=args.seed)
    eyes = tuple(EYES) if args.eye == "both" else (args.eye,)
    base = ExperimentConfig(seed=args.seed, rounds=args.rounds, trees=args.trees,
                            max_depth=args.max_depth, corpus_size=args.corpus_size,
                            patch_count=args.patches, histogram_mode=args.mode,
                            n_radii=args.radial, n_angles=args.angular)
    grid = GridSpec(filter_sizes=tuple(parse_int_list(args.sizes)),
                    bits=tuple(parse_int_list(args.bits)),
                    feature_kinds=tuple(args.feature.split(",")),
                    paddings=tuple(args.padding.split(",")),
                    classifier_names=tuple(args.classifier.split(",")),
                    eyes=eyes, base=base)
    records = run_grid(manifest, split, grid, args.out, jobs=args.jobs,
                       timing=not args.no_timing,
                       provenance=_provenance(args, args.seed), log=_log)
    if records:
        best = best_config(records)
        _log(f"best: {best.config.key()} accuracy={best.accuracy:.4f}")
    _log(f"wrote results to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="mbsif", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mbsif {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed_kw = dict(type=int, default=_default_seed(),
                   help="RNG seed (default: $MBSIF_SEED or 0)")

    p = sub.add_parser("learn-filters", help="train a filter bank from an image corpus")
    p.add_argument("--corpus", required=True, help="directory of .pgm/.png training images")
    p.add_argument("--size", type=int, required=True, help="filter side length (odd)")
    p.add_argument("--bits", type=int, required=True, help="number of filters")
    p.add_argument("--patches", type=int, default=50000, help="training patches (default 50000)")
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--source", choices=["natural", "eye", "custom"], default="custom")
    p.add_argument("--description", default="", help="free-text corpus description")
    p.add_argument("--out", required=True, help="output bank file")
    p.set_defaults(func=cmd_learn_filters)

    p = sub.add_parser("inspect", help="print filter-bank metadata")
    p.add_argument("--bank", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth-corpus", help="generate the two-class synthetic strip corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, default=400)
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--radial", type=int, default=DEFAULT_RADIAL)
    p.add_argument("--angular", type=int, default=DEFAULT_ANGULAR)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("normalize", help="rubber-sheet manifest samples into strips")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--radial", type=int, default=DEFAULT_RADIAL)
    p.add_argument("--angular", type=int, default=DEFAULT_ANGULAR)
    p.add_argument("--seed", **seed_kw)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("encode", help="encode one strip into a code image")
    p.add_argument("--bank", required=True)
    p.add_argument("--in", dest="input", required=True, help="strip image (PGM/PNG)")
    p.add_argument("--mask", default=None, help="occlusion mask image (255 = occluded)")
    p.add_argument("--padding", choices=sorted(PRESETS), default="modified")
    p.add_argument("--zero-mask", action=argparse.BooleanOptionalAction, default=True,
                   help="zero masked pixels before filtering (default on)")
    p.add_argument("--dump-code", default=None, help="write the code image as PGM")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("features", help="extract feature vectors for a manifest")
    p.add_argument("--bank", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--padding", choices=sorted(PRESETS), default="modified")
    p.add_argument("--kind", choices=["histogram", "full_image"], default="histogram")
    p.add_argument("--mode", choices=["mask_zeroed", "mask_excluded"], default="mask_zeroed")
    p.add_argument("--eye", choices=["left", "right", "both"], default="both")
    p.add_argument("--radial", type=int, default=DEFAULT_RADIAL)
    p.add_argument("--angular", type=int, default=DEFAULT_ANGULAR)
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="fit a classifier on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--classifier", choices=["adaboost", "logitboost", "forest"],
                   default="adaboost")
    p.add_argument("--rounds", type=int, default=100, help="boosting rounds")
    p.add_argument("--trees", type=int, default=500, help="forest size")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="apply a model to a labelled feature CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", default=None, help="write results here instead of stdout")
    p.add_argument("--seed", **seed_kw)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="run the filter-size x bits evaluation grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sizes", default="5,7,9,11,13,15,17",
                   help="filter sizes, comma list / dash ranges")
    p.add_argument("--bits", default="5-12", help="bit counts, comma list / dash ranges")
    p.add_argument("--padding", default="modified",
                   help="comma list of presets: traditional,modified,replicate")
    p.add_argument("--feature", default="histogram",
                   help="comma list: histogram,full_image")
    p.add_argument("--classifier", default="adaboost",
                   help="comma list: adaboost,logitboost,forest")
    p.add_argument("--eye", choices=["left", "right", "both"], default="left")
    p.add_argument("--mode", choices=["mask_zeroed", "mask_excluded"], default="mask_zeroed")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--corpus-size", type=int, default=13)
    p.add_argument("--patches", type=int, default=50000)
    p.add_argument("--radial", type=int, default=DEFAULT_RADIAL)
    p.add_argument("--angular", type=int, default=DEFAULT_ANGULAR)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--no-timing", action="store_true",
                   help="write 0.000 in the seconds column for byte-reproducible output")
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures -> exit 2
        print(f"mbsif: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
