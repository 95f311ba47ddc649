import math
import os

import numpy as np
import pytest
import torch

from edgesr import training
from edgesr.checkpoint import Checkpoint, CheckpointError, weights_bytes
from edgesr.losses import ConfigError, random_extractor, save_extractor


@pytest.fixture
def images():
    rng = np.random.default_rng(0)
    out = []
    for k in range(3):
        yy, xx = np.mgrid[0:40, 0:40] / 40.0
        base = np.stack([np.sin(6 * xx + k), np.cos(5 * yy - k), xx * yy], -1) * 0.4 + 0.5
        out.append(np.clip(base + 0.05 * rng.random((40, 40, 3)), 0, 1))
    return out


@pytest.fixture
def cfg(tmp_path):
    ext = tmp_path / "vgg.pt"
    save_extractor(str(ext), random_extractor(0.0625))
    return training.TrainConfig(
        scale=2, hr_size=32, batch_size=2, g_width=4, d_width=4, max_steps=3,
        extractor_path=str(ext), checkpoint_dir=str(tmp_path / "ck"), checkpoint_interval=0,
    )


def test_config_text_roundtrip(cfg):
    back = training.TrainConfig.from_text(cfg.to_text())
    assert back == cfg


def test_config_parsing(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# toy\nscale = 8\nhr_size = 64  # small\nrandom_crop = false\nlr_initial = 1e-3\n")
    c = training.TrainConfig.from_file(str(path), seed=5)
    assert (c.scale, c.hr_size, c.random_crop, c.lr_initial, c.seed) == (8, 64, False, 1e-3, 5)
    with pytest.raises(ValueError):
        training.TrainConfig.from_text("bogus = 1")
    with pytest.raises(ValueError):
        training.TrainConfig.from_text("scale = 3")
    with pytest.raises(ValueError):
        training.TrainConfig.from_text("random_crop = maybe")


def test_config_defaults():
    c = training.TrainConfig()
    assert (c.adam_beta1, c.adam_beta2) == (0.0, 0.9)
    assert c.d_to_g_lr_ratio == 0.1
    assert c.loss_weights.lambda_s == 250.0


def test_checkpoint_dir_env(cfg, monkeypatch, tmp_path):
    monkeypatch.setenv(training.CHECKPOINT_DIR_ENV, str(tmp_path / "elsewhere"))
    assert cfg.resolved_checkpoint_dir() == str(tmp_path / "elsewhere")


def test_make_sample_sizes():
    cfg = training.TrainConfig(scale=4, hr_size=512)
    hr = np.random.default_rng(0).random((520, 530, 3))
    s = training.make_sample(hr, cfg)
    assert s.hr.shape == (512, 512, 3)
    assert s.lr.shape == (128, 128, 3)
    assert s.c_lr.shape == (128, 128)
    assert s.lr_gray_up.shape == (512, 512, 1)
    assert s.c_lr_up.shape == (512, 512)
    assert s.c_gt.shape == (512, 512)


def test_make_sample_constant_and_deterministic():
    cfg = training.TrainConfig(scale=2, hr_size=32)
    s = training.make_sample(np.full((32, 32, 3), 0.4), cfg)
    assert not s.c_gt.any() and not s.c_lr.any()
    hr = np.random.default_rng(1).random((48, 48, 3))
    a = training.make_sample(hr, cfg, np.random.default_rng(7))
    b = training.make_sample(hr, cfg, np.random.default_rng(7))
    for f in ("hr", "lr", "c_gt", "c_lr_up"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_make_sample_rejects_small():
    with pytest.raises(ValueError):
        training.make_sample(np.zeros((16, 40, 3)), training.TrainConfig(scale=2, hr_size=32))


def test_plateau_monitor():
    m = training.PlateauMonitor(window=2, patience=3, min_improvement=0.01)
    assert not any(m.update(v) for v in (10, 9, 8))
    flags = [m.update(8.0) for _ in range(4)]
    # the first 8.0 still improves the window average (8.5 -> 8.0)
    assert flags == [False, False, False, True]


def test_edge_step_and_optimizer_betas(cfg):
    tr = training.EdgeStageTrainer(cfg, [np.zeros((32, 32, 3)) + 0.5] + [np.random.default_rng(2).random((32, 32, 3))])
    losses = tr.step()
    assert set(losses) == {"d", "adv", "fm", "objective", "lr"}
    ck = tr.checkpoint()
    for opt in ("g", "d"):
        assert ck.optimizers[opt]["param_groups"][0]["betas"] == (0.0, 0.9)
    assert ck.optimizers["d"]["param_groups"][0]["lr"] == pytest.approx(0.1 * cfg.lr_initial)


def test_edge_objective_without_fm_is_hinge(cfg, images):
    c = training.TrainConfig(**{**vars(cfg), "lambda_fm": 0.0})
    losses = training.EdgeStageTrainer(c, images).step()
    assert losses["objective"] == losses["adv"]


def test_resume_is_bit_identical(cfg, images, tmp_path):
    a = training.EdgeStageTrainer(cfg, images)
    a.step()
    a.step()
    path = a.checkpoint().save(str(tmp_path / "mid.pt"))
    expected = a.step()
    b = training.EdgeStageTrainer(cfg, images, resume=Checkpoint.load(path))
    assert b.step_count == 2
    assert b.step() == expected


def test_run_writes_log_and_checkpoints(cfg, images):
    c = training.TrainConfig(**{**vars(cfg), "checkpoint_interval": 2, "max_steps": 4})
    ck = training.train_edge_stage(c, images)
    d = c.checkpoint_dir
    assert ck.step == 4
    assert os.path.isfile(os.path.join(d, "edge.pt"))
    assert os.path.isfile(os.path.join(d, "edge_step2.pt"))
    lines = open(os.path.join(d, "edge.log")).read().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("step=1 d=") and "time=" in lines[0]


def test_checkpoint_weights_roundtrip(cfg, images, tmp_path):
    ck = training.EdgeStageTrainer(cfg, images).checkpoint()
    p1 = ck.save(str(tmp_path / "a.pt"))
    back = Checkpoint.load(p1)
    back.save(str(tmp_path / "b.pt"))
    again = Checkpoint.load(str(tmp_path / "b.pt"))
    assert weights_bytes(ck.networks) == weights_bytes(back.networks) == weights_bytes(again.networks)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        Checkpoint.load(str(tmp_path / "missing.pt"))
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        Checkpoint.load(str(bad))
    torch.save({"format": "other"}, tmp_path / "other.pt")
    with pytest.raises(CheckpointError):
        Checkpoint.load(str(tmp_path / "other.pt"))


def test_empty_dataset(cfg):
    with pytest.raises(ValueError):
        training.EdgeStageTrainer(cfg, [])


def test_nonfinite_aborts_with_dump(cfg, images):
    tr = training.EdgeStageTrainer(cfg, images)
    with torch.no_grad():
        next(tr.generator.parameters()).fill_(math.nan)
    with pytest.raises(training.TrainingDiverged):
        tr.step()
    assert os.path.isfile(os.path.join(cfg.checkpoint_dir, "edge_nonfinite_step1.pt"))


@pytest.fixture
def edge_ckpt(cfg, images):
    return training.EdgeStageTrainer(cfg, images).run(2)


def test_sr_stage_keeps_g1_frozen(cfg, images, edge_ckpt):
    from edgesr.checkpoint import weights_digest

    before = weights_digest(edge_ckpt.network("g1"))
    tr = training.SRStageTrainer(cfg, images, edge_ckpt)
    tr.run(100)
    assert weights_digest(tr.g1.state_dict()) == before
    assert not tr.g1.training
    ck = tr.checkpoint()
    assert {"g1", "g2", "d2", "d1"} <= set(ck.networks)


def test_sr_stage_step_keys(cfg, images, edge_ckpt):
    losses = training.SRStageTrainer(cfg, images, edge_ckpt).step()
    assert set(losses) == {"d", "l1", "adv", "perc", "style", "objective", "lr"}
    assert losses["perc"] > 0 and losses["style"] > 0


def test_sr_stage_needs_extractor(cfg, images, edge_ckpt):
    c = training.TrainConfig(**{**vars(cfg), "extractor_path": "/nonexistent/vgg.pt"})
    with pytest.raises(ConfigError):
        training.SRStageTrainer(c, images, edge_ckpt)


def test_sr_stage_missing_g1(cfg, images, tmp_path):
    with pytest.raises(CheckpointError):
        training.train_sr_stage(cfg, images, str(tmp_path / "none.pt"))


def test_l1_only_decreases_monotonically(cfg, images, edge_ckpt):
    c = training.TrainConfig(**{
        **vars(cfg), "lambda_g2": 0.0, "lambda_p": 0.0, "lambda_s": 0.0,
        "batch_size": 1, "random_crop": False, "lr_initial": 1e-4, "lr_fine": 1e-5,
        "extractor_path": "",
    })
    tr = training.SRStageTrainer(c, images[:1], edge_ckpt)
    l1 = [tr.step()["l1"] for _ in range(20)]
    assert all(b < a for a, b in zip(l1, l1[1:])), l1


def test_pipeline_shapes_and_determinism(cfg, images, edge_ckpt):
    ck = training.SRStageTrainer(cfg, images, edge_ckpt).run(1)
    pipe = training.Pipeline(ck)
    lr = np.random.default_rng(3).random((9, 11, 3))
    edges, sr = pipe(lr)
    assert edges.shape == (18, 22) and sr.shape == (18, 22, 3)
    assert 0 <= edges.min() and edges.max() <= 1
    edges2, sr2 = pipe(lr)
    np.testing.assert_array_equal(sr, sr2)
    with pytest.raises(ValueError):
        pipe(lr[..., :1])


def test_load_image_dir(tmp_path):
    from edgesr import imaging

    imaging.write_png(str(tmp_path / "a.png"), np.zeros((40, 40, 3)))
    imaging.write_png(str(tmp_path / "b.png"), np.zeros((10, 40)))
    (tmp_path / "c.png").write_bytes(b"junk")
    imgs, names = training.load_image_dir(str(tmp_path), min_size=32)
    assert names == ["a"]
    assert imgs[0].shape == (40, 40, 3)
