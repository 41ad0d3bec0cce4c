import csv
import hashlib
import logging

import numpy as np
import pytest
import yaml
from PIL import Image

from dsalgan import cli
from dsalgan.train import Checkpoint

TINY = {
    "data": {"size": 32, "n_train": 8, "n_test": 4, "sigmas": [10, 50]},
    "net": {"width_scale": 0.0625, "disc_width_scale": 0.125, "denoiser_depth": 1, "denoiser_channels": 4},
    "train": {"batch_size": 2, "steps": {"pretrain_denoise": 2, "pretrain_sod": 2, "joint": 2}},
    "eval": {"sigmas": [10, 30, 50, 80]},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return str(path)


@pytest.fixture
def images(tmp_path):
    rng = np.random.default_rng(0)
    d = tmp_path / "in"
    d.mkdir()
    for name in ("a", "b", "c"):
        Image.fromarray(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)).save(d / f"{name}.png")
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return out, str(cfg)


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_corrupt_sigma_zero_keeps_pixels(images, tmp_path):
    assert cli.main(["corrupt", str(images), "--sigma", "0", "--out", str(tmp_path / "o")]) == 0
    for src in images.iterdir():
        out = tmp_path / "o" / "noisy" / f"{src.stem}_s0.png"
        np.testing.assert_array_equal(np.asarray(Image.open(out)), np.asarray(Image.open(src)))


def test_corrupt_benchmark_grid_and_determinism(images, tmp_path):
    for run in ("r1", "r2"):
        assert cli.main(["corrupt", str(images), "--sigma", "10,30,50,80", "--seed", "4", "--out", str(tmp_path / run)]) == 0
    with open(tmp_path / "r1" / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 3
    assert _sha(tmp_path / "r1" / "manifest.csv") == _sha(tmp_path / "r2" / "manifest.csv")
    for f in (tmp_path / "r1" / "noisy").iterdir():
        assert _sha(f) == _sha(tmp_path / "r2" / "noisy" / f.name)
    assert (tmp_path / "r1" / "config.resolved.yaml").exists()


def test_corrupt_missing_input_is_usage_error(tmp_path):
    assert cli.main(["corrupt", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_train_zero_steps_writes_initialization(config, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", config, "--phase", "pretrain_denoise", "--steps", "0", "--out", str(out)]) == 0
    ckpt = Checkpoint.load(out / "pretrain_denoise.ckpt")
    assert ckpt.step == 0 and ckpt.completed == ["pretrain_denoise"]
    assert (out / "config.resolved.yaml").exists()


def test_joint_without_pretraining_exits_2(config, tmp_path, capsys):
    assert cli.main(["train", "--config", config, "--phase", "joint", "--out", str(tmp_path / "r")]) == 2
    assert "pretrain" in capsys.readouterr().err


def test_phases_chain_through_output_dir(trained):
    out, _ = trained
    for phase in ("pretrain_denoise", "pretrain_sod", "joint"):
        assert (out / f"{phase}.ckpt").exists()
    log = (out / "train_log.csv").read_text().splitlines()
    assert len(log) == 1 + 6
    ckpt = Checkpoint.load(out / "joint.ckpt")
    assert ckpt.completed == ["pretrain_denoise", "pretrain_sod", "joint"]


def test_eval_unknown_checkpoint_exits_2(config, tmp_path):
    assert cli.main(["eval", "--config", config, "--checkpoint", str(tmp_path / "x.ckpt"), "--out", str(tmp_path)]) == 2


def test_eval_writes_row_per_dataset_and_sigma(trained, tmp_path):
    out, cfg = trained
    data = []
    for name in ("one", "two"):
        d = tmp_path / name
        assert cli.main(["make-corpus", "--config", cfg, "--n", "3", "--out", str(d)]) == 0
        data += ["--data", str(d)]
    rep = tmp_path / "rep"
    code = cli.main(["eval", "--config", cfg, "--checkpoint", str(out / "joint.ckpt"), "--out", str(rep), "--panels", "2"] + data)
    assert code == 0
    with open(rep / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 4
    md = (rep / "metrics.md").read_text()
    assert "| one |" in md and "sigma=80" in md
    assert len(list((rep / "panels").glob("*.png"))) == 2
    assert (rep / "config.resolved.yaml").exists()


def test_eval_falls_back_to_shapes(trained, tmp_path, monkeypatch):
    monkeypatch.delenv("DSALGAN_DATA", raising=False)
    out, cfg = trained
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(out / "joint.ckpt"), "--sigma", "50", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["dataset"], float(r["sigma"]), int(r["n_images"])) for r in rows] == [("shapes_test", 50.0, 4)]


def test_demo_resizes_with_warning(trained, tmp_path, caplog):
    out, _ = trained
    img = tmp_path / "odd.png"
    Image.fromarray(np.full((40, 50, 3), 120, np.uint8)).save(img)
    target = tmp_path / "demo.png"
    with caplog.at_level(logging.WARNING, logger="dsalgan"):
        assert cli.main(["demo", str(img), "--checkpoint", str(out / "joint.ckpt"), "--sigma", "30", "--out", str(target)]) == 0
    assert "resizing" in caplog.text
    assert Image.open(target).size == (4 * 32 + 3 * 2, 32)


def test_bad_sigma_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["corrupt", "x", "--out", "y", "--sigma", "ten"])
    assert exc.value.code == 2
