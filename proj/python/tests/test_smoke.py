import math

import numpy as np
import pytest

import crm


def test_interval_ops():
    assert crm.iou((0.0, 10.0), (5.0, 15.0)) == pytest.approx(1 / 3)
    assert crm.hull((0.0, 2.0), (5.0, 8.0)) == (0.0, 8.0)
    assert crm.order_relation((0.0, 1.0), (2.0, 3.0)) == 0
    assert crm.order_relation((2.0, 3.0), (0.0, 1.0)) == 1


def test_proposal_counts():
    assert len(crm.generate_proposals(128, [8, 12, 20, 32, 64], 8)) == 67
    assert len(crm.generate_proposals(256, [8, 16, 32, 64, 128], 8)) == 134


def test_losses():
    assert crm.bce_loss(0.5, 0.5, 0.5) == pytest.approx(4 * math.log(2))
    joint = crm.joint_probability(np.array([0.8, 0.0]), np.array([0.5, 0.3]))
    assert joint.shape == (2, 2)
    assert joint[0, 0] == pytest.approx(0.4)


def test_gradient_check():
    report = crm.gradient_check(max_coordinates=50)
    assert report["coordinates"] >= 50
    assert report["max_rel_error"] < 1e-3


def test_config_errors_name_key():
    with pytest.raises(crm.ConfigError, match="train.epoch"):
        crm.RunConfig.parse("[train]\nepoch = 3\n")


def test_synth_train_evaluate(tmp_path):
    cfg = crm.RunConfig.parse(
        "[data]\nnum_videos = 12\nnum_clips = 16\nvideo_dim = 8\ntext_dim = 8\n"
        "min_event_length = 3\nmax_event_length = 5\n"
        "[model]\nhidden_dim = 8\nwindow_sizes = 4,8,16\nstride = 4\n"
        "[train]\nepochs = 2\nbatch_videos = 4\nmax_concat_words = 6\n"
    )
    digest = crm.synth(cfg, tmp_path / "data")
    assert digest == crm.synth(cfg, tmp_path / "again")
    rows = crm.train(cfg, tmp_path / "data", tmp_path / "m.ckpt")
    assert [r["epoch"] for r in rows] == [1, 2]
    assert all(math.isfinite(r["loss"]) for r in rows)
    report = crm.evaluate(tmp_path / "m.ckpt", tmp_path / "data", split="all")
    recalls = [report["recall_at"][k] for k in ("0.3", "0.5", "0.7")]
    assert recalls == sorted(recalls, reverse=True)
    assert report["schema_version"] == 1


def test_bce_only_switch():
    cfg = crm.RunConfig()
    cfg.losses = "bce"
    assert cfg.losses == "bce"
    with pytest.raises(ValueError):
        cfg.losses = "bce,xyz"
