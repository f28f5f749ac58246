import math

import numpy as np
import pytest
from PIL import Image

import sauge


def test_balanced_bce_value_and_gradient_shape():
    target = np.array([[1, 0], [0, 0]], np.uint8)
    pred = np.array([[0.8, 0.2], [0.2, 0.2]])
    value, grad = sauge.balanced_bce(pred, target)
    assert value == pytest.approx(1.5 * -math.log(0.8), abs=1e-9)
    assert grad.shape == (2, 2)
    assert grad[0, 0] < 0 < grad[0, 1]


def test_differ_and_total():
    maps = {
        "coarse": np.array([[0.1, 0.2]]),
        "medium": np.array([[0.1, 0.9]]),
        "fine": np.array([[0.8, 0.9]]),
    }
    # Annotators whose ladder is coarse [0,0], medium [0,1], fine [1,1].
    annotations = [np.array([[0, 1]], np.uint8), np.array([[1, 1]], np.uint8), np.array([[0, 0]], np.uint8)]
    ladder = sauge.build_ladder(annotations)
    assert ladder["coarse"].tolist() == [[0, 0]]
    assert ladder["medium"].tolist() == [[0, 1]]
    assert ladder["fine"].tolist() == [[1, 1]]
    assert sauge.differ_loss(maps, annotations) == pytest.approx(-2.8, abs=1e-12)
    assert sauge.total_loss(2.0, -2.8, 1.0) == pytest.approx(2.22, abs=1e-12)


def test_ladder_is_nested():
    rng = np.random.default_rng(0)
    ann = [(rng.random((9, 7)) < 0.3).astype(np.uint8) for _ in range(5)]
    l = sauge.build_ladder(ann)
    assert np.all(l["coarse"] <= l["medium"]) and np.all(l["medium"] <= l["fine"])


def test_blend_endpoints():
    rng = np.random.default_rng(1)
    maps = {k: rng.random((4, 5)) for k in ("coarse", "medium", "fine")}
    for alpha, key in ((0.0, "coarse"), (0.5, "medium"), (1.0, "fine")):
        np.testing.assert_array_equal(sauge.blend(maps, alpha), maps[key])
    assert sauge.sweep_alphas(11)[-1] == 1.0
    with pytest.raises(sauge.InputError):
        sauge.blend(maps, 1.5)


def test_consensus_sample():
    on, off = np.ones((4, 4), np.uint8), np.zeros((4, 4), np.uint8)
    label, soft = sauge.sample_consensus([on, on, on], zeta=0.2, seed=3)
    assert label.dtype == np.uint8 and np.all(label == 1)
    assert np.all((soft >= 0) & (soft <= 1))
    label, _ = sauge.sample_consensus([off, off], seed=3)
    assert not label.any()


def test_evaluate_perfect_and_best_match():
    rng = np.random.default_rng(2)
    gts = [(rng.random((8, 8)) < 0.2).astype(np.uint8) for _ in range(3)]
    report = sauge.evaluate([g.astype(float) for g in gts], [[g] for g in gts], nms=False, thresholds=9)
    assert report["ods"]["f"] == 1.0 and report["ois"]["f"] == 1.0
    assert len(report["precision"]) == 9
    noise = [rng.random((8, 8)) for _ in gts]
    best = sauge.evaluate([[n, g.astype(float)] for n, g in zip(noise, gts)], [[g] for g in gts], nms=False)
    assert best["ods"]["f"] == 1.0
    assert best["image_selected_candidate"] == [1, 1, 1]


def test_shape_errors_raise():
    with pytest.raises(sauge.DimensionError):
        sauge.balanced_bce(np.zeros((2, 2)), np.zeros((2, 3), np.uint8))


def test_parameter_budget():
    assert 800_000 <= sauge.base_parameter_count() <= 2_000_000


def test_train_and_infer(tmp_path):
    yy, xx = np.mgrid[:32, :32]
    img = np.where((yy > 8) & (yy < 24) & (xx > 6) & (xx < 20), 220, 30).astype(np.uint8)
    edge = ((np.abs(np.diff(img, axis=0, prepend=img[:1])) + np.abs(np.diff(img, axis=1, prepend=img[:, :1]))) > 0)
    (tmp_path / "images").mkdir()
    Image.fromarray(np.stack([img] * 3, axis=2)).save(tmp_path / "images" / "a.png")
    (tmp_path / "annotations" / "a").mkdir(parents=True)
    for k in range(2):
        Image.fromarray((edge * 255).astype(np.uint8)).save(tmp_path / "annotations" / "a" / f"{k}.png")
    config = {
        "provider.seed": 7, "provider.grid_side": 2, "provider.feature_side": 16, "provider.mask_side": 16,
        "provider.shallow_channels": 8, "provider.embed_channels": 8, "provider.mask_channels": 4,
        "stn.c1": 8, "stn.ch": 8, "stn.heads": 2, "stn.ffb_depth": 1,
        "train.batch_size": 1, "train.epochs": 2,
    }
    losses, ckpt = sauge.train(config, tmp_path, tmp_path / "run")
    assert len(losses) == 2 and all(math.isfinite(v) for v in losses)

    model = sauge.Model(ckpt)
    assert model.epoch == 2 and model.step == 2
    assert model.config["train.epochs"] == "2"
    rgb = np.stack([img / 255.0] * 3, axis=2)
    (fused,) = model.infer(rgb)
    assert fused.shape == (32, 32)
    assert len(model.infer(rgb, candidates=3)) == 3
    np.testing.assert_array_equal(model.infer(rgb, alpha=0.5)[0], model.infer(rgb, alpha=0.5)[0])
    with pytest.raises(sauge.InputError):
        model.infer(rgb, alpha=-0.1)

    with pytest.raises(sauge.ConfigError):
        sauge.train({"train.unknown": 1}, tmp_path, tmp_path / "bad")
