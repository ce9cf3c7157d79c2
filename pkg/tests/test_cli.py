"""CLI subcommands, exit codes and artifact plumbing."""

import subprocess
import sys

import numpy as np
import pytest

from mbsif.cli import main, parse_int_list
from mbsif.encoder import read_features_csv
from mbsif.imaging import load_gray


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    assert main(["synth-corpus", "--out", str(root), "--subjects", "24",
                 "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def bank(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_bank") / "bank.bsif"
    code = main(["learn-filters", "--corpus", str(corpus / "images"),
                 "--size", "7", "--bits", "6", "--patches", "600",
                 "--seed", "5", "--source", "eye", "--out", str(out)])
    assert code == 0
    return out


class TestParseIntList:
    def test_mixed_lists_and_ranges(self):
        assert parse_int_list("5,7-9,12") == [5, 7, 8, 9, 12]
        assert parse_int_list("5-12") == list(range(5, 13))
        assert parse_int_list("11") == [11]

    def test_bad_input(self):
        with pytest.raises(ValueError):
            parse_int_list("9-5")


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["inspect", "--bogus", "x"]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_subcommand_is_usage_error(self):
        assert main([]) == 1

    def test_runtime_error_is_two(self, capsys):
        assert main(["inspect", "--bank", "/nonexistent/bank.bsif"]) == 2
        assert "error" in capsys.readouterr().err

    def test_version_exits_zero(self, capsys):
        assert main(["--version"]) == 0
        assert "mbsif" in capsys.readouterr().out


class TestSynthCorpus:
    def test_manifest_and_images_exist(self, corpus):
        assert (corpus / "manifest.csv").exists()
        strips = list((corpus / "images").glob("*.pgm"))
        assert len(strips) == 48  # 24 subjects x 2 eyes
        img = load_gray(strips[0])
        assert (img.height, img.width) == (20, 240)


class TestBankCommands:
    def test_inspect_prints_metadata(self, bank, capsys):
        assert main(["inspect", "--bank", str(bank)]) == 0
        out = capsys.readouterr().out
        assert "size: 7" in out and "bits: 6" in out and "seed: 5" in out
        assert "source: eye" in out

    def test_seed_env_fallback(self, corpus, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("MBSIF_SEED", "123")
        out = tmp_path / "envbank.bsif"
        assert main(["learn-filters", "--corpus", str(corpus / "images"),
                     "--size", "5", "--bits", "4", "--patches", "300",
                     "--out", str(out)]) == 0
        assert main(["inspect", "--bank", str(out)]) == 0
        assert "seed: 123" in capsys.readouterr().out


class TestEncodeFeatures:
    def test_encode_dumps_code_image(self, corpus, bank, tmp_path):
        strip = next((corpus / "images").glob("*.pgm"))
        mask = corpus / "masks" / (strip.stem + "_mask.pgm")
        out = tmp_path / "code.pgm"
        assert main(["encode", "--bank", str(bank), "--in", str(strip),
                     "--mask", str(mask), "--padding", "traditional",
                     "--dump-code", str(out)]) == 0
        code = load_gray(out)
        assert (code.height, code.width) == (20, 240)
        assert code.pixels.max() <= 63  # 6 bits

    def test_features_csv(self, corpus, bank, tmp_path):
        out = tmp_path / "features.csv"
        assert main(["features", "--bank", str(bank), "--manifest",
                     str(corpus / "manifest.csv"), "--padding", "modified",
                     "--kind", "histogram", "--eye", "left",
                     "--out", str(out)]) == 0
        assert out.read_text().startswith("# mbsif")
        feats = read_features_csv(out)
        assert len(feats) == 24
        assert all(len(f.values) == 64 for f in feats)
        assert all(f.eye == "left" for f in feats)


class TestTrainEvaluate:
    def test_train_then_evaluate(self, corpus, bank, tmp_path, capsys):
        feats = tmp_path / "f.csv"
        assert main(["features", "--bank", str(bank), "--manifest",
                     str(corpus / "manifest.csv"), "--eye", "left",
                     "--out", str(feats)]) == 0
        model = tmp_path / "model.bin"
        assert main(["train", "--features", str(feats), "--classifier", "adaboost",
                     "--rounds", "30", "--out", str(model)]) == 0
        assert model.exists()
        capsys.readouterr()
        assert main(["evaluate", "--model", str(model), "--features", str(feats)]) == 0
        out = capsys.readouterr().out
        header, values = [l for l in out.splitlines() if not l.startswith("#")]
        assert header.startswith("accuracy,")
        acc = float(values.split(",")[0])
        assert 0.0 <= acc <= 1.0

    def test_forest_training(self, corpus, bank, tmp_path):
        feats = tmp_path / "f2.csv"
        main(["features", "--bank", str(bank), "--manifest",
              str(corpus / "manifest.csv"), "--eye", "right", "--out", str(feats)])
        model = tmp_path / "forest.bin"
        assert main(["train", "--features", str(feats), "--classifier", "forest",
                     "--trees", "10", "--seed", "2", "--out", str(model)]) == 0


class TestNormalize:
    def test_normalize_writes_strips_and_manifest(self, tmp_path):
        from mbsif.imaging import GrayImage, save_gray

        yy, xx = np.mgrid[0:301, 0:301]
        dist = np.sqrt((xx - 150.0) ** 2 + (yy - 150.0) ** 2)
        save_gray(GrayImage(np.clip(np.rint(dist), 0, 255).astype(np.uint8)),
                  tmp_path / "eye.pgm")
        save_gray(GrayImage(np.zeros((301, 301), dtype=np.uint8)), tmp_path / "occ.pgm")
        (tmp_path / "ann.csv").write_text(
            "sample_id,subject_id,eye,gender,image_path,mask_path,"
            "pupil_cx,pupil_cy,pupil_r,iris_cx,iris_cy,iris_r\n"
            "s1_left,s1,left,male,eye.pgm,occ.pgm,150,150,30,150,150,120\n")
        out = tmp_path / "norm"
        assert main(["normalize", "--manifest", str(tmp_path / "ann.csv"),
                     "--out-dir", str(out)]) == 0
        strip = load_gray(out / "strips" / "s1_left.pgm")
        assert (strip.height, strip.width) == (20, 240)
        from mbsif.harness import load_manifest
        man = load_manifest(out / "manifest.csv")
        assert man.entries[0].prenormalized


class TestGrid:
    def test_grid_runs_and_is_reproducible(self, corpus, tmp_path):
        args = ["grid", "--manifest", str(corpus / "manifest.csv"),
                "--sizes", "3", "--bits", "3,4", "--padding", "modified",
                "--feature", "histogram", "--classifier", "adaboost",
                "--eye", "left", "--rounds", "20", "--patches", "200",
                "--corpus-size", "8", "--seed", "7", "--no-timing"]
        out1, out2 = tmp_path / "g1.csv", tmp_path / "g2.csv"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        rows = [l for l in out1.read_text().splitlines()
                if l and not l.startswith("#")]
        assert rows[0].startswith("config_hash,")
        assert len(rows) == 1 + 2  # header + 2 bit settings


class TestConsoleScript:
    def test_installed_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "mbsif.cli", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "mbsif" in proc.stdout
