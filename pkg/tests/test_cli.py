import csv
import hashlib
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
import yaml

from rdlearn.cli import main
from rdlearn.config import ConfigError, load_config, parse_override, preset_names
from rdlearn.data import Dataset
from rdlearn.rbm import load_params


def tiny_config(out, **extra):
    cfg = {
        "name": "tiny",
        "output_dir": str(out),
        "seed": 0,
        "n_seeds": 1,
        "objectives": ["rd", "fwdkld"],
        "model": {"kind": "ising2d", "side": 3, "beta": 0.5},
        "data": {"source": "exact", "train_size": 256, "val_size": 64},
        "train": {"epochs": 4, "minibatch": 64, "eval_interval": 2},
        "sampling": {"count": 128, "steps": 5},
        "evaluation": {"hamming_k": 50},
    }
    for k, v in extra.items():
        cfg[k] = v
    return cfg


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config(tmp_path / "out")))
    return path


def tree_digest(root):
    """SHA-256 per tracked file under ``root``."""
    skip = (".timing.csv", "run_log.jsonl")
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and not str(p).endswith(skip)}


def run_pipeline(cfg_path):
    args = ["--config", str(cfg_path)]
    assert main(["generate-data", *args]) == 0
    for obj in ("rd", "fwdkld"):
        assert main(["train", *args, "--objective", obj]) == 0
        assert main(["sample", *args, "--objective", obj]) == 0
    assert main(["evaluate", *args]) == 0


class TestPipeline:
    def test_stages_write_expected_files(self, config_file, tmp_path):
        run_pipeline(config_file)
        out = tmp_path / "out"
        for rel in ("data/shared/model.json", "data/shared/train.rbd", "data/shared/train.rbd.json",
                    "checkpoints/rd_s0.rbm", "checkpoints/rd_s0_init.rbm", "metrics/rd_s0.csv",
                    "samples/fwdkld_s0.rbd", "report/summary.csv", "report/metrics.csv",
                    "report/hamming.csv", "report/pca.csv", "manifest.json", "run_log.jsonl"):
            assert (out / rel).is_file(), rel

        rows = list(csv.DictReader(open(out / "metrics/rd_s0.csv")))
        assert [int(r["epoch"]) for r in rows] == [2, 4]
        assert set(rows[0]) == {"epoch", "objective_value", "r_theta"}

        summary = list(csv.DictReader(open(out / "report/summary.csv")))
        assert {r["metric"] for r in summary} == {"wasserstein", "r_theta"}
        assert {r["method"] for r in summary} == {"rd", "fwdkld"}
        assert list(summary[0]) == ["metric", "method", "n_seeds", "mean", "stderr"]

        assert len(Dataset.load(out / "samples/rd_s0.rbd")) == 128
        manifest = json.loads((out / "manifest.json").read_text())
        assert "checkpoints/rd_s0.rbm" in manifest["artifacts"]
        assert not any(k.endswith(".timing.csv") for k in manifest["artifacts"])

    def test_rerun_is_byte_identical(self, tmp_path):
        digests = []
        for name in ("a", "b"):
            path = tmp_path / f"{name}.yaml"
            path.write_text(yaml.safe_dump(tiny_config(tmp_path / "out")))
            run_pipeline(path)
            digests.append(tree_digest(tmp_path / "out"))
            shutil.rmtree(tmp_path / "out")
        assert digests[0] == digests[1]
        assert len(digests[0]) > 15

    def test_zero_epochs_checkpoint_is_initialization(self, config_file, tmp_path):
        args = ["--config", str(config_file)]
        assert main(["generate-data", *args]) == 0
        assert main(["train", *args, "--objective", "rd", "--epochs", "0"]) == 0
        out = tmp_path / "out"
        assert load_params(out / "checkpoints/rd_s0.rbm") == load_params(out / "checkpoints/rd_s0_init.rbm")
        assert (out / "metrics/rd_s0.csv").read_text().strip() == "epoch,objective_value,r_theta"

    def test_metrics_row_count(self, config_file, tmp_path):
        args = ["--config", str(config_file)]
        main(["generate-data", *args])
        assert main(["train", *args, "--objective", "revkld", "--set", "train.epochs=10",
                     "--set", "train.eval_interval=5"]) == 0
        rows = (tmp_path / "out/metrics/revkld_s0.csv").read_text().strip().splitlines()
        assert len(rows) - 1 == 10 // 5

    def test_self_comparison_zero_wasserstein(self, config_file, tmp_path):
        args = ["--config", str(config_file)]
        main(["generate-data", *args])
        main(["train", *args, "--objective", "rd", "--epochs", "0"])
        out = tmp_path / "out"
        # zero steps from the training set reproduces it exactly
        assert main(["sample", *args, "--objective", "rd", "--steps", "0", "--count", "256"]) == 0
        main(["evaluate", *args])
        rows = [r for r in csv.DictReader(open(out / "report/metrics.csv")) if r["metric"] == "wasserstein"]
        assert float(rows[0]["value"]) == 0.0

    def test_explicit_sample_paths(self, config_file, tmp_path):
        args = ["--config", str(config_file)]
        main(["generate-data", *args])
        main(["train", *args, "--objective", "rd"])
        out = tmp_path / "out"
        init_bytes = (out / "data/shared/train.rbd").read_bytes()
        dest = tmp_path / "gen.rbd"
        assert main(["sample", "--checkpoint", str(out / "checkpoints/rd_s0.rbm"),
                     "--init", str(out / "data/shared/train.rbd"), "--out", str(dest),
                     "--steps", "3", "--count", "10", "--seed", "4"]) == 0
        assert len(Dataset.load(dest)) == 10
        assert (out / "data/shared/train.rbd").read_bytes() == init_bytes


class TestErrors:
    def test_missing_checkpoint(self, tmp_path, capsys):
        dest = tmp_path / "gen.rbd"
        code = main(["sample", "--checkpoint", str(tmp_path / "nope.rbm"), "--init", str(tmp_path / "x.rbd"),
                     "--out", str(dest)])
        err = capsys.readouterr().err.strip()
        assert code != 0
        assert len(err.splitlines()) == 1 and err.startswith("rdlearn: error: FileNotFoundError")
        assert not dest.exists()

    def test_dimension_mismatch_leaves_no_output(self, config_file, tmp_path, capsys):
        args = ["--config", str(config_file)]
        main(["generate-data", *args])
        main(["train", *args, "--objective", "rd"])
        wrong = tmp_path / "wrong.rbd"
        Dataset(np.zeros((4, 5), dtype=np.uint8)).save(wrong)
        dest = tmp_path / "gen.rbd"
        code = main(["sample", "--checkpoint", str(tmp_path / "out/checkpoints/rd_s0.rbm"),
                     "--init", str(wrong), "--out", str(dest)])
        assert code == 1
        assert "Nx" in capsys.readouterr().err
        assert not dest.exists() and not (tmp_path / "gen.rbd.json").exists()

    def test_missing_data(self, config_file, capsys):
        assert main(["train", "--config", str(config_file), "--objective", "rd"]) == 1
        assert "generate-data" in capsys.readouterr().err

    def test_bad_objective(self, config_file, capsys):
        main(["generate-data", "--config", str(config_file)])
        assert main(["train", "--config", str(config_file), "--objective", "alpha"]) != 0
        assert "unknown objective" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(tiny_config(tmp_path / "out", bogus=1)))
        assert main(["generate-data", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert err.count("\n") == 1 and "bogus" in err

    def test_usage(self, capsys):
        assert main(["train"]) == 2
        assert capsys.readouterr().err.startswith("rdlearn: error: UsageError")

    def test_infeasible_tempering_sizes(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path / "out")
        cfg["data"] = {"source": "tempering", "total_mcs": 100, "record_interval_mcs": 10,
                       "burn_in_records": 0, "train_size": 64, "val_size": 64}
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(cfg))
        assert main(["generate-data", "--config", str(path)]) != 0
        assert "infeasible" in capsys.readouterr().err
        assert not (tmp_path / "out/data/shared/train.rbd").exists()


class TestConfig:
    def test_presets_load(self):
        for name in preset_names():
            cfg = load_config(preset=name)
            cfg.validate()
        assert "ising-144" in preset_names() and "ising-16-desk" in preset_names()

    def test_full_preset_values(self):
        cfg = load_config(preset="ising-144")
        assert cfg.train.epochs == 1000 and cfg.train.minibatch == 128
        assert cfg.data.total_mcs == 10**6 and cfg.data.train_size == 16384 and cfg.data.val_size == 1024
        assert cfg.sampling.count == 16384 and cfg.sampling.steps == 100

    def test_override_parsing(self):
        assert parse_override("train.epochs=5") == ("train.epochs", 5)
        assert parse_override("model.beta=0.25") == ("model.beta", 0.25)
        with pytest.raises(ConfigError):
            parse_override("noequals")

    def test_override_applies(self):
        cfg = load_config(preset="ising-16-desk", overrides=[("train.epochs", 7), ("seed", 3)])
        assert cfg.train.epochs == 7 and cfg.seed == 3

    def test_no_source(self):
        with pytest.raises(ConfigError):
            load_config()

    def test_config_file_not_mutated(self, config_file):
        before = config_file.read_bytes()
        load_config(str(config_file), overrides=[("train.epochs", 1)])
        assert config_file.read_bytes() == before


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "rdlearn.cli", "presets"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "ising-16-desk" in res.stdout.split()
