import struct

import numpy as np
import pytest

from fedcoal import data, model
from fedcoal.data import (
    IdxBadMagic,
    IdxCountMismatch,
    IdxTruncated,
    ScenarioConfig,
    build_scenario,
    gen_synthetic_pool,
    load_idx,
)


def small_cfg(**overrides):
    base = dict(
        mode="ltp",
        num_clients=3,
        num_tasks=2,
        classes_per_task=2,
        num_classes=8,
        feature_dim=6,
        seed=11,
        samples_per_class=40,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


class TestSyntheticPool:
    def test_zero_spread_collapses_to_mean(self):
        pool = gen_synthetic_pool(4, 5, 0.0, seed=3)
        rng = np.random.default_rng(0)
        samples = pool.sample(2, 10, rng)
        assert np.allclose(samples, pool.means[2])

    def test_deterministic_means(self):
        a = gen_synthetic_pool(6, 4, 0.1, seed=9)
        b = gen_synthetic_pool(6, 4, 0.1, seed=9)
        assert np.array_equal(a.means, b.means)

    def test_means_on_unit_sphere(self):
        pool = gen_synthetic_pool(10, 8, 0.2, seed=1)
        assert np.allclose(np.linalg.norm(pool.means, axis=1), 1.0)

    def test_small_spread_is_linearly_separable(self):
        pool = gen_synthetic_pool(2, 8, 0.1, seed=5)
        rng = np.random.default_rng(5)
        x = np.concatenate([pool.sample(0, 100, rng), pool.sample(1, 100, rng)])
        y = np.concatenate([np.zeros(100, dtype=int), np.ones(100, dtype=int)])
        clf = model.local_train(
            model.Classifier.zeros(2, 8),
            None,
            x,
            y,
            model.Hyperparams(kd_weight=0.0, local_iters=100, batch_size=32),
            np.random.default_rng(0),
        )
        logits = model.forward(clf, x)
        acc = (logits.argmax(axis=1) == y).mean()
        assert acc > 0.95


class TestBuildScenario:
    def test_shuffle_clients_share_task_sets(self):
        cfg = small_cfg(mode="shuffle", num_clients=2)
        tls = build_scenario(cfg)
        sets0 = {t.class_ids for t in tls[0].tasks}
        sets1 = {t.class_ids for t in tls[1].tasks}
        assert sets0 == sets1

    def test_ltp_tasks_disjoint_within_client(self):
        for tl in build_scenario(small_cfg()):
            seen: set[int] = set()
            for task in tl.tasks:
                assert seen.isdisjoint(task.class_ids)
                seen.update(task.class_ids)

    def test_standard_scale_uses_12_classes_per_client(self):
        cfg = ScenarioConfig(
            mode="ltp", num_clients=8, num_tasks=6, classes_per_task=2,
            num_classes=26, feature_dim=8, seed=0, samples_per_class=10,
        )
        for tl in build_scenario(cfg):
            assert len(tl.seen_classes(5)) == 12

    def test_two_cluster_shares_labels_not_features(self):
        cfg = small_cfg(mode="two_cluster", num_clients=4, num_classes=8, blob_spread=0.01)
        tls = build_scenario(cfg)
        # same task class-sets everywhere
        sets = [{t.class_ids for t in tl.tasks} for tl in tls]
        assert sets[0] == sets[1] == sets[2] == sets[3]
        # but a shared class looks different across the two groups
        cls = tls[0].tasks[0].class_ids[0]
        def class_mean(tl):
            for task in tl.tasks:
                if cls in task.class_ids:
                    return task.train_x[task.train_y == cls].mean(axis=0)
        within = np.linalg.norm(class_mean(tls[0]) - class_mean(tls[1]))
        across = np.linalg.norm(class_mean(tls[0]) - class_mean(tls[3]))
        assert across > 3 * within

    def test_infeasible_config_rejected(self):
        with pytest.raises(ValueError):
            build_scenario(small_cfg(num_tasks=5, classes_per_task=2, num_classes=8))

    def test_deterministic(self):
        a = build_scenario(small_cfg())
        b = build_scenario(small_cfg())
        for ta, tb in zip(a, b):
            for xa, xb in zip(ta.tasks, tb.tasks):
                assert xa.class_ids == xb.class_ids
                assert np.array_equal(xa.train_x, xb.train_x)
                assert np.array_equal(xa.test_y, xb.test_y)

    def test_split_partitions_task_samples(self):
        cfg = small_cfg()
        total = cfg.samples_per_class * cfg.classes_per_task
        for tl in build_scenario(cfg):
            for task in tl.tasks:
                n = len(task.train_y) + len(task.val_y) + len(task.test_y)
                assert n == total
                assert len(task.train_y) == int(0.7 * total)

    def test_labels_match_task_classes(self):
        for tl in build_scenario(small_cfg()):
            for task in tl.tasks:
                assert set(np.unique(task.train_y)) <= set(task.class_ids)


def write_idx_pair(tmp_path, images, labels, image_magic=data.IDX_IMAGE_MAGIC,
                   label_magic=data.IDX_LABEL_MAGIC, truncate_images=0, label_count=None):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / "img.idx"
    lbl_path = tmp_path / "lbl.idx"
    img_payload = struct.pack(">iiii", image_magic, n, rows, cols) + images.tobytes()
    if truncate_images:
        img_payload = img_payload[:-truncate_images]
    img_path.write_bytes(img_payload)
    lbl_count = len(labels) if label_count is None else label_count
    lbl_path.write_bytes(struct.pack(">ii", label_magic, lbl_count) + bytes(labels))
    return img_path, lbl_path


class TestLoadIdx:
    def test_shape_and_scaling(self, tmp_path):
        images = np.zeros((2, 4, 4), dtype=np.uint8)
        images[0, 0, 0] = 255
        images[1, 3, 3] = 128
        img, lbl = write_idx_pair(tmp_path, images, [1, 0])
        features, labels = load_idx(img, lbl)
        assert features.shape == (2, 16)
        assert features[0, 0] == 1.0
        assert features[1, 15] == pytest.approx(128 / 255)
        assert labels.tolist() == [1, 0]

    def test_bad_magic(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0],
                                  image_magic=0)
        with pytest.raises(IdxBadMagic):
            load_idx(img, lbl)

    def test_truncated(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((2, 3, 3), dtype=np.uint8), [0, 1],
                                  truncate_images=4)
        with pytest.raises(IdxTruncated):
            load_idx(img, lbl)

    def test_count_mismatch(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0])
        with pytest.raises(IdxCountMismatch):
            load_idx(img, lbl)
