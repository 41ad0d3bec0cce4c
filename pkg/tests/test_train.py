import math

import numpy as np
import pytest
import torch

from dsalgan import data as D
from dsalgan import losses as L
from dsalgan.config import ConfigError, TrainConfig
from dsalgan.pipeline import build_models, build_specs
from dsalgan.train import (
    Checkpoint,
    CheckpointError,
    NonFiniteLossError,
    TrainData,
    TrainState,
    append_log,
    run_schedule,
    train_step_denoise,
    train_step_joint,
    train_step_sod,
)

SIZE = 32


def tiny_specs():
    return build_specs(SIZE, width_scale=1 / 16, denoiser_depth=2, denoiser_channels=4, disc_width_scale=0.125)


@pytest.fixture(scope="module")
def toy_data():
    return TrainData.from_samples(D.make_shapes_corpus(10, SIZE, seed=4))


def fresh(toy_data, seed=0):
    return TrainState.fresh(build_models(tiny_specs(), seed), toy_data, seed)


def cfg(phase, steps=0, **kw):
    kw.setdefault("batch_size", 4)
    kw.setdefault("gen_lr", 1e-3)
    kw.setdefault("disc_lr", 1e-3)
    return TrainConfig(phase=phase, steps=steps, **kw)


def snapshot(models, name):
    return {k: v.detach().clone() for k, v in models.params[name].tensors.items()}


def same(a, b):
    return all(torch.equal(a[k], b[k]) for k in a)


def test_pure_regression_loss_decreases(toy_data):
    state = fresh(toy_data)
    c = cfg("pretrain_denoise", 50, weights=L.LossWeights(w1=0), sigmas=(50.0,))
    run_schedule([c], state)
    losses = [r.content for r in state.history]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_same_seed_same_losses(toy_data):
    runs = []
    for _ in range(2):
        state = fresh(toy_data, seed=3)
        run_schedule([cfg("pretrain_denoise", 5), cfg("pretrain_sod", 5)], state)
        runs.append([r.values() for r in state.history])
    assert runs[0] == runs[1]


def test_discriminator_steps_per_generator_step(toy_data):
    state = fresh(toy_data)
    c = cfg("pretrain_denoise", d_steps_per_g=2)
    state.begin_phase(c)
    for _ in range(3):
        train_step_denoise(state, c)
    assert state.counters["D1_updates"] == 6
    assert state.counters["G1_updates"] == 3


def test_bce_only_training_reaches_pixel_accuracy(toy_data):
    state = fresh(toy_data)
    c = cfg("pretrain_sod", 300, weights=L.LossWeights(w2=0, w3=0), sigmas=(0.0,))
    run_schedule([c], state)
    with torch.no_grad():
        maps = state.models("G2", state.models("G1", toy_data.clean))
    accuracy = ((maps >= 0.5).float() == toy_data.masks).float().mean().item()
    assert accuracy > 0.9


def test_pretrain_sod_leaves_denoiser_untouched(toy_data):
    state = fresh(toy_data)
    before = snapshot(state.models, "G1")
    g2 = snapshot(state.models, "G2")
    run_schedule([cfg("pretrain_sod", 5)], state)
    assert same(before, snapshot(state.models, "G1"))
    assert not same(g2, snapshot(state.models, "G2"))


def test_cycle_term_positive_at_init(toy_data):
    state = fresh(toy_data)
    c = cfg("pretrain_sod")
    state.begin_phase(c)
    assert train_step_sod(state, c).cyclic > 0


def test_disabled_cycle_keeps_reverse_generator_fixed(toy_data):
    state = fresh(toy_data)
    g3 = snapshot(state.models, "G3")
    run_schedule([cfg("pretrain_sod", 3, weights=L.LossWeights(w3=0))], state)
    assert same(g3, snapshot(state.models, "G3"))
    assert all(r.cyclic > 0 for r in state.history)


def test_joint_step_moves_every_network(toy_data):
    state = fresh(toy_data)
    state.completed = ["pretrain_denoise", "pretrain_sod"]
    before = {n: snapshot(state.models, n) for n in state.models.specs}
    run_schedule([cfg("joint", 2)], state)
    for name in state.models.specs:
        assert not same(before[name], snapshot(state.models, name)), name
    report = state.history[-1]
    assert all(math.isfinite(v) for v in report.values())


def test_joint_freeze_flag(toy_data):
    state = fresh(toy_data)
    state.completed = ["pretrain_denoise", "pretrain_sod"]
    before = snapshot(state.models, "G1")
    c = cfg("joint", freeze_g1=True)
    state.begin_phase(c)
    train_step_joint(state, c)
    assert same(before, snapshot(state.models, "G1"))


def test_saliency_lr_applies_to_g2_and_g3_only(toy_data):
    state = fresh(toy_data)
    state.completed = ["pretrain_denoise", "pretrain_sod"]
    state.begin_phase(cfg("joint", saliency_lr=2e-4))
    lrs = {name: opt.param_groups[0]["lr"] for name, opt in state.optims.items()}
    assert lrs == {"G1": 1e-3, "G2": 2e-4, "G3": 2e-4, "D1": 1e-3, "D2": 1e-3}
    state.begin_phase(cfg("joint"))
    assert state.optims["G2"].param_groups[0]["lr"] == 1e-3
    with pytest.raises(ConfigError, match="positive"):
        cfg("joint", saliency_lr=0.0)


def test_step_functions_check_phase(toy_data):
    state = fresh(toy_data)
    with pytest.raises(ConfigError):
        train_step_sod(state, cfg("pretrain_denoise"))
    with pytest.raises(ConfigError):
        train_step_joint(state, cfg("pretrain_sod"))


def test_zero_step_schedule_is_initialization(toy_data, tmp_path):
    state = fresh(toy_data, seed=2)
    init = {n: snapshot(state.models, n) for n in state.models.specs}
    run_schedule([cfg("pretrain_denoise", 0)], state, checkpoint_dir=tmp_path)
    ckpt = Checkpoint.load(tmp_path / "pretrain_denoise.ckpt")
    for name, params in ckpt.params.items():
        assert same(init[name], params)
    assert ckpt.completed == ["pretrain_denoise"]


def test_joint_refused_without_pretraining(toy_data):
    state = fresh(toy_data)
    with pytest.raises(ConfigError, match="pretrain"):
        run_schedule([cfg("joint", 1)], state)
    state.completed = ["pretrain_denoise"]
    with pytest.raises(ConfigError, match="pretrain_sod"):
        run_schedule([cfg("joint", 1)], state)


def _values(history):
    return np.array([r.values() for r in history])


def test_checkpoint_round_trip_reproduces_losses(toy_data, tmp_path):
    schedule = [cfg("pretrain_denoise", 4), cfg("pretrain_sod", 6, checkpoint_every=3), cfg("joint", 3)]
    full = fresh(toy_data, seed=1)
    run_schedule(schedule, full, checkpoint_dir=tmp_path)

    ckpt = Checkpoint.load(tmp_path / "pretrain_sod_step000003.ckpt")
    resumed = TrainState.from_checkpoint(ckpt, toy_data)
    run_schedule(schedule, resumed)
    tail = full.history[4 + 3:]
    np.testing.assert_allclose(_values(resumed.history), _values(tail), rtol=1e-6)


def test_checkpoint_refuses_other_spec(toy_data, tmp_path):
    state = fresh(toy_data)
    path = state.checkpoint().save(tmp_path / "a.ckpt")
    other = dict(tiny_specs())
    other["G2"] = build_specs(SIZE, width_scale=1 / 8)["G2"]
    with pytest.raises(CheckpointError, match="G2"):
        Checkpoint.load(path, specs=other)
    Checkpoint.load(path, specs=tiny_specs())
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "junk.ckpt")
    with pytest.raises(FileNotFoundError):
        Checkpoint.load(tmp_path / "missing.ckpt")


def test_non_finite_loss_aborts_with_batch_dump(toy_data, tmp_path):
    state = fresh(toy_data)
    state.dump_dir = tmp_path
    with torch.no_grad():
        state.models.params["D1"].tensors["fc6.bias"].fill_(float("nan"))
    c = cfg("pretrain_denoise")
    state.begin_phase(c)
    with pytest.raises(NonFiniteLossError, match="batch indices"):
        train_step_denoise(state, c)
    dumps = list(tmp_path.glob("nonfinite_*.npz"))
    assert len(dumps) == 1
    assert np.load(dumps[0])["indices"].shape == (4,)


def test_log_totals_are_weighted_sums(toy_data, tmp_path):
    state = fresh(toy_data)
    log = tmp_path / "log.csv"
    run_schedule([cfg("pretrain_denoise", 3), cfg("pretrain_sod", 3)], state, log_path=log)
    lines = log.read_text().splitlines()
    assert len(lines) == 7
    for r in state.history:
        r.check()


def test_append_log_writes_header_once(tmp_path):
    log = tmp_path / "log.csv"
    append_log(log, [L.LossReport("joint", 1, 2)])
    append_log(log, [L.LossReport("joint", 2, 2)])
    lines = log.read_text().splitlines()
    assert lines[0].split(",") == L.LossReport.columns()
    assert len(lines) == 3
