"""Split protocol, experiment pipeline and the resumable grid runner."""

import numpy as np
import pytest

from mbsif.harness import (DatasetManifest, ExperimentConfig, GridSpec, ManifestEntry,
                           best_config, cross_validate, load_manifest, load_normalized,
                           make_split, run_config, run_grid, select_one_per_subject)
from mbsif.imaging import Circle
from mbsif.synth import generate_corpus

# small, fast pipeline settings shared by the harness tests
FAST = dict(filter_size=5, bits=4, rounds=30, patch_count=500, corpus_size=8)


def synthetic_manifest(tmp_path, subjects=40, seed=0):
    return load_manifest(generate_corpus(tmp_path / f"corpus{seed}_{subjects}",
                                         subjects=subjects, seed=seed))


def entry(sample_id, subject_id, eye="left", gender="male"):
    return ManifestEntry(sample_id=sample_id, subject_id=subject_id, eye=eye,
                         gender=gender, image_path="x.pgm", mask_path="m.pgm",
                         pupil=Circle(0, 0, 0), iris=Circle(0, 0, 0))


class TestManifest:
    def test_duplicate_sample_id_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            DatasetManifest(entries=(entry("a", "s1"), entry("a", "s2")))

    def test_inconsistent_gender_rejected(self):
        with pytest.raises(ValueError, match="inconsistent"):
            DatasetManifest(entries=(entry("a", "s1", gender="male"),
                                     entry("b", "s1", gender="female")))

    def test_load_resolves_relative_paths(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=4)
        assert all(e.image_path.startswith(str(tmp_path)) for e in man.entries)
        norm = load_normalized(man.entries[0])
        assert (norm.strip.height, norm.strip.width) == (20, 240)
        assert norm.gender_label in ("male", "female")

    def test_missing_columns_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("sample_id,eye\nx,left\n")
        with pytest.raises(ValueError, match="missing columns"):
            load_manifest(p)

    def test_annotated_entry_goes_through_rubber_sheet(self, tmp_path):
        """Rows with real circles normalize via the rubber sheet and agree
        with a direct call on the same annotation."""
        import numpy as np

        from mbsif.imaging import BitMask, GrayImage, save_gray
        from mbsif.normalization import IrisAnnotation, rubber_sheet

        yy, xx = np.mgrid[0:301, 0:301]
        dist = np.sqrt((xx - 150.0) ** 2 + (yy - 150.0) ** 2)
        eye_img = GrayImage(np.clip(np.rint(dist), 0, 255).astype(np.uint8))
        occ = np.zeros((301, 301), bool)
        occ[:120, :] = True
        save_gray(eye_img, tmp_path / "eye.pgm")
        save_gray(GrayImage(np.where(occ, 255, 0).astype(np.uint8)), tmp_path / "occ.pgm")
        (tmp_path / "ann.csv").write_text(
            "sample_id,subject_id,eye,gender,image_path,mask_path,"
            "pupil_cx,pupil_cy,pupil_r,iris_cx,iris_cy,iris_r\n"
            "s1_left,s1,left,female,eye.pgm,occ.pgm,150,150,30,150,150,120\n")
        man = load_manifest(tmp_path / "ann.csv")
        assert not man.entries[0].prenormalized
        norm = load_normalized(man.entries[0], 20, 240)
        direct = rubber_sheet(eye_img,
                              IrisAnnotation(pupil=man.entries[0].pupil,
                                             iris=man.entries[0].iris,
                                             occlusion=BitMask(occ)),
                              20, 240)
        assert np.array_equal(norm.strip.pixels, direct.strip.pixels)
        assert np.array_equal(norm.mask.bits, direct.mask.bits)
        assert norm.gender_label == "female" and norm.eye == "left"
        assert norm.mask.bits.any() and not norm.mask.bits.all()


class TestMakeSplit:
    def test_eighty_twenty_arithmetic(self, tmp_path):
        """100M + 100F at 0.8 -> 80M + 80F train, 20M + 20F test."""
        man = synthetic_manifest(tmp_path, subjects=200)
        split = make_split(man, 0.8, seed=1)
        genders = {e.subject_id: e.gender for e in man.entries}
        train_m = sum(genders[s] == "male" for s in split.train_subjects)
        test_m = sum(genders[s] == "male" for s in split.test_subjects)
        assert (train_m, len(split.train_subjects) - train_m) == (80, 80)
        assert (test_m, len(split.test_subjects) - test_m) == (20, 20)

    def test_deterministic(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=40)
        assert make_split(man, 0.8, seed=9) == make_split(man, 0.8, seed=9)
        assert make_split(man, 0.8, seed=9) != make_split(man, 0.8, seed=10)

    def test_disjointness_and_fold_evenness(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=46)
        for seed in range(25):
            split = make_split(man, 0.8, seed=seed)
            train, test = set(split.train_subjects), set(split.test_subjects)
            assert not train & test
            assert train | test == {e.subject_id for e in man.entries}
            fold_sets = [set(f) for f in split.folds]
            assert set().union(*fold_sets) == train
            assert sum(len(f) for f in fold_sets) == len(train)
            sizes = sorted(len(f) for f in fold_sets)
            assert sizes[-1] - sizes[0] <= 1

    def test_per_gender_fraction_within_one_subject(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=54)  # 27 per gender
        genders = {e.subject_id: e.gender for e in man.entries}
        for seed in range(10):
            split = make_split(man, 0.8, seed=seed)
            for g in ("male", "female"):
                total = sum(1 for s in genders.values() if s == g) / 2  # two eyes
                got = sum(genders[s] == g for s in split.train_subjects)
                assert abs(got - 0.8 * 27) <= 1

    def test_too_few_subjects(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=14)
        with pytest.raises(ValueError, match="at least 10"):
            make_split(man, 0.8, seed=0)


class TestSelectOnePerSubject:
    def test_one_per_subject_and_deterministic(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=20)
        entries = man.for_eye("left")
        doubled = entries + [
            ManifestEntry(sample_id=e.sample_id + "_b", subject_id=e.subject_id,
                          eye=e.eye, gender=e.gender, image_path=e.image_path,
                          mask_path=e.mask_path, pupil=e.pupil, iris=e.iris)
            for e in entries
        ]
        chosen = select_one_per_subject(doubled, seed=3)
        assert len(chosen) == 20
        assert len({e.subject_id for e in chosen}) == 20
        assert chosen == select_one_per_subject(doubled, seed=3)
        assert chosen != select_one_per_subject(doubled, seed=4)


class TestRunConfig:
    def test_synthetic_corpus_accuracy(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=60, seed=5)
        split = make_split(man, 0.8, seed=2)
        cfg = ExperimentConfig(eye="left", padding="modified", seed=4, **FAST)
        rec = run_config(man, split, cfg)
        assert rec.accuracy >= 0.9
        assert rec.male_total + rec.female_total == len(split.test_subjects)

    def test_counts_sum_and_accuracy_exact(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=40, seed=6)
        split = make_split(man, 0.8, seed=0)
        rec = run_config(man, split, ExperimentConfig(eye="right", seed=1, **FAST))
        assert rec.accuracy == (rec.male_correct + rec.female_correct) / (
            rec.male_total + rec.female_total)
        assert rec.male_correct <= rec.male_total
        assert rec.female_correct <= rec.female_total

    def test_randomized_labels_give_chance_accuracy(self, tmp_path):
        """Shuffling subject genders destroys the signal: accuracy lands in
        the chance band [0.35, 0.65]."""
        man = synthetic_manifest(tmp_path, subjects=200, seed=7)
        subjects = sorted({e.subject_id for e in man.entries})
        rng = np.random.default_rng(12)
        genders = ["male", "female"] * (len(subjects) // 2)
        rng.shuffle(genders)
        relabel = dict(zip(subjects, genders))
        shuffled = DatasetManifest(entries=tuple(
            ManifestEntry(sample_id=e.sample_id, subject_id=e.subject_id, eye=e.eye,
                          gender=relabel[e.subject_id], image_path=e.image_path,
                          mask_path=e.mask_path, pupil=e.pupil, iris=e.iris)
            for e in man.entries))
        split = make_split(shuffled, 0.8, seed=3)
        rec = run_config(shuffled, split, ExperimentConfig(eye="left", seed=8, **FAST))
        assert 0.35 <= rec.accuracy <= 0.65

    def test_identical_config_identical_record(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=40, seed=9)
        split = make_split(man, 0.8, seed=1)
        cfg = ExperimentConfig(eye="left", seed=5, **FAST)
        a = run_config(man, split, cfg)
        b = run_config(man, split, cfg)
        assert a.csv_row(timing=False) == b.csv_row(timing=False)


class TestCrossValidate:
    def test_folds_and_mean(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=50, seed=11)
        split = make_split(man, 0.8, seed=4)
        # folds train on 32 subjects only; needs a slightly stronger bank
        # than the other harness tests to stay comfortably separable
        cfg = ExperimentConfig(eye="left", seed=2, filter_size=11, bits=8,
                               rounds=60, patch_count=2000, corpus_size=10)
        mean, std, accs = cross_validate(man, split, cfg)
        assert len(accs) == 5
        assert min(accs) <= mean <= max(accs)
        assert mean >= 0.9  # separable synthetic corpus
        assert std >= 0.0


class TestRunGrid:
    def _grid(self):
        base = ExperimentConfig(seed=3, **FAST)
        return GridSpec(filter_sizes=(3,), bits=(3, 4), paddings=("modified", "traditional"),
                        classifier_names=("adaboost",), eyes=("left",), base=base)

    def test_row_count_and_determinism(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=30, seed=13)
        split = make_split(man, 0.8, seed=5)
        grid = self._grid()
        out1 = tmp_path / "r1.csv"
        out2 = tmp_path / "r2.csv"
        recs = run_grid(man, split, grid, out1, timing=False, provenance="p")
        assert len(recs) == len(grid.configs()) == 4
        run_grid(man, split, grid, out2, timing=False, provenance="p")
        assert out1.read_bytes() == out2.read_bytes()
        lines = [l for l in out1.read_text().splitlines() if l and not l.startswith("#")]
        assert len(lines) == 1 + 4  # header + rows

    def test_resume_produces_identical_csv(self, tmp_path):
        """Truncating the journal mid-run and re-running completes the rest
        and rewrites the same final bytes."""
        man = synthetic_manifest(tmp_path, subjects=30, seed=13)
        split = make_split(man, 0.8, seed=5)
        grid = self._grid()
        full = tmp_path / "full.csv"
        run_grid(man, split, grid, full, timing=False, provenance="p")
        lines = full.read_text().splitlines(keepends=True)
        partial = tmp_path / "partial.csv"
        partial.write_text("".join(lines[:4]))  # provenance + header + 2 rows
        run_grid(man, split, grid, partial, timing=False, provenance="p")
        assert partial.read_bytes() == full.read_bytes()

    def test_parallel_jobs_match_sequential(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=30, seed=13)
        split = make_split(man, 0.8, seed=5)
        base = ExperimentConfig(seed=3, **FAST)
        grid = GridSpec(filter_sizes=(3,), bits=(3, 4), paddings=("modified",),
                        classifier_names=("adaboost",), eyes=("left",), base=base)
        seq = tmp_path / "seq.csv"
        par = tmp_path / "par.csv"
        run_grid(man, split, grid, seq, jobs=1, timing=False, provenance="p")
        run_grid(man, split, grid, par, jobs=2, timing=False, provenance="p")
        assert seq.read_bytes() == par.read_bytes()

    def test_best_config_tie_break(self, tmp_path):
        man = synthetic_manifest(tmp_path, subjects=30, seed=13)
        split = make_split(man, 0.8, seed=5)
        recs = run_grid(man, split, self._grid(), tmp_path / "b.csv", timing=False)
        best = best_config(recs)
        top = max(r.accuracy for r in recs)
        contenders = [r for r in recs if r.accuracy == top]
        assert best.config.bits == min(r.config.bits for r in contenders)
