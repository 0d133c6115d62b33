import math

import numpy as np
import pytest

import gpcl

HALF_SOFTMAX = -math.log(math.e / (math.e + 1.0))


@pytest.fixture(scope="module")
def scene():
    return gpcl.gen_scene("indoor", seed=0, scene_seed=1)


def test_gen_scene_shapes(scene):
    n = len(scene)
    assert n > 0
    assert scene.coords.shape == (n, 3)
    assert scene.feats.shape[0] == n
    assert len(scene.labels) == n
    assert all(0 <= y < scene.class_count for y in scene.labels)
    again = gpcl.gen_scene("indoor", seed=0, scene_seed=1)
    assert np.array_equal(scene.coords, again.coords)


def test_scene_round_trip(scene, tmp_path):
    path = tmp_path / "scene.gpcl"
    gpcl.save_scene(scene, path)
    back = gpcl.load_scene(path)
    assert np.array_equal(back.coords, scene.coords.astype(np.float32))
    assert back.labels == scene.labels


def test_view_pair_matches(scene):
    pair = gpcl.make_view_pair(scene, "indoor", seed=0, pair_seed=0, min_overlap_points=16)
    assert len(pair.matches) >= 16
    for i, j in pair.matches[:50]:
        assert pair.view1.origin_ids[i] == pair.view2.origin_ids[j]


def test_cross_entropy_gradient_shape():
    scores = np.array([[2.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    out = gpcl.cross_entropy(scores, [0, gpcl.IGNORE_LABEL])
    assert out["value"] > 0.0
    assert all(g.shape == scores.shape for g in out["grads"].values())


def test_pseudo_labels():
    labels, conf = gpcl.pseudo_labels(np.array([[5.0, 0.0, 0.0]]))
    assert labels == [0]
    assert conf[0] == pytest.approx(math.exp(5) / (math.exp(5) + 2), rel=1e-12)


def test_guided_pair_value():
    e1 = np.array([[1.0, 0.0]])
    e2 = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = gpcl.guided_contrastive([(0, 0)], e1, e2, [0], np.array([0.9]), [0, 1], np.array([0.9, 0.9]), [], [1], tau=1.0)
    assert out["value"] == pytest.approx(HALF_SOFTMAX, rel=1e-12)


def test_point_infonce():
    e = np.eye(2)
    assert gpcl.point_infonce([(0, 0)], e, e, 0.1)["value"] == 0.0
    assert gpcl.point_infonce([(0, 0), (1, 1)], e, e, 1.0)["value"] == pytest.approx(HALF_SOFTMAX, rel=1e-12)
    with pytest.raises(ValueError):
        gpcl.point_infonce([], e, e, 0.1)


def test_cbs_counts():
    labels = [0] * 100 + [1] * 100 + [2] * 100 + [3]
    matches = [(i, i) for i in range(len(labels))]
    picked = gpcl.cbs_positive_pairs(matches, labels, 5, 10, seed=3)
    assert len(picked) == 10
    counts = np.bincount([labels[i] for i, _ in picked], minlength=5)
    assert list(counts) == [3, 3, 3, 1, 0]
    assert gpcl.cbs_positive_pairs(matches, labels, 5, 10, seed=3) == picked


def test_memory_bank():
    bank = gpcl.MemoryBank(3, 2, 4, 2)
    with pytest.raises(gpcl.EmptyBank):
        bank.sample(4)
    for k in range(6):
        bank.push(0, np.array([float(k), 0.0]))
    assert bank.queue(0)[:, 0].tolist() == [2.0, 3.0, 4.0, 5.0]
    bank.push(1, np.array([0.0, 1.0]))
    keys, tags = bank.sample(3, seed=1)
    assert keys.shape == (3, 2)
    assert sorted(tags) == [0, 0, 1]


def test_segmentation_scores():
    s = gpcl.segmentation_scores([0, 1, 1], [0, 1, 0], 2)
    assert s["iou"] == pytest.approx([0.5, 0.5])
    assert s["miou"] == pytest.approx(0.5)


def test_tiny_train(tmp_path):
    clouds = [gpcl.gen_scene("indoor", seed=0, scene_seed=k) for k in range(3)]
    config = {"hidden": 12, "feat_dim": 8, "embed_dim": 6, "proj_hidden": 8, "k_p": 48, "k_n": 64,
              "min_overlap": 24, "total_iters": 3, "warmup_iters": 0, "eval_every": 0, "log_every": 1}
    out = gpcl.train(clouds[:1], clouds[1:2], clouds[2:], config)
    assert 0.0 <= out["miou"] <= 1.0
    assert [row["iter"] for row in out["log"]] == [1, 2, 3]
    again = gpcl.train(clouds[:1], clouds[1:2], clouds[2:], config)
    assert out["params"].bitwise_equal(again["params"])
    path = tmp_path / "model.gpck"
    out["params"].save(path)
    assert gpcl.ModelParams.load(path).bitwise_equal(out["params"])
    pred = gpcl.predict(out["params"], clouds[2])
    assert len(pred) == len(clouds[2])
