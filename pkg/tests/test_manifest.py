import json
from collections import Counter

import numpy as np
import pytest

from refvid.bench.manifest import DatasetManifest, plan_episodes, sample_episodes
from refvid.bench.synthetic import SuiteSpec, write_suite
from refvid.errors import ManifestError


@pytest.fixture(scope="module")
def manifest(small_suite):
    return DatasetManifest.load(small_suite)


def test_load(manifest):
    assert manifest.dataset_id == "tiny"
    assert manifest.resolution == (64, 64)
    assert {c: len(v) for c, v in manifest.classes().items()} == {"class00": 4, "class01": 4, "class02": 4}
    img, m = manifest.load_pair(0)
    assert img.shape == (64, 64, 3) and m.shape == (64, 64) and m.any()


def test_one_shot_enumerates_all_pairs(manifest):
    # 4 images per class give 4 * 3 ordered (reference, target) pairs
    plans = plan_episodes(manifest, 1, 36, seed=0)
    by_class = Counter(p.class_id for p in plans)
    assert set(by_class.values()) == {12}
    for c in by_class:
        pairs = {(p.references, p.target) for p in plans if p.class_id == c}
        assert len(pairs) == 12


def test_plans_are_valid_and_deterministic(manifest):
    a = plan_episodes(manifest, 2, 20, seed=5)
    assert a == plan_episodes(manifest, 2, 20, seed=5)
    assert a != plan_episodes(manifest, 2, 20, seed=6)
    classes = manifest.classes()
    for i, p in enumerate(a):
        assert p.episode_id == f"tiny-{i:05d}"
        assert p.target not in p.references and len(set(p.references)) == 2
        assert all(r in classes[p.class_id] for r in p.references + (p.target,))
    assert [p.class_id for p in a[:6]] == ["class00", "class01", "class02"] * 2


def test_negative_targets_come_from_other_classes(manifest):
    classes = manifest.classes()
    for p in plan_episodes(manifest, 1, 30, seed=1, negative=True):
        assert p.target not in classes[p.class_id]
    ep = sample_episodes(manifest, 1, 1, negative=True)[0]
    assert not ep.target_gt.any()


def test_errors(manifest, tmp_path):
    with pytest.raises(ManifestError):
        plan_episodes(manifest, 4, 1)  # needs 5 per class
    with pytest.raises(ManifestError):
        DatasetManifest.load(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dataset_id": "x", "entries": [{"image": "a.png", "mask": "b.png", "class": 0}]}))
    with pytest.raises(ManifestError, match="missing files"):
        DatasetManifest.load(bad)
    bad.write_text(json.dumps({"entries": []}))
    with pytest.raises(ManifestError, match="missing field"):
        DatasetManifest.load(bad)


def test_single_class_has_no_negatives(tmp_path):
    m = DatasetManifest.load(write_suite(tmp_path, SuiteSpec(n_classes=1, per_class=2, resolution=32)))
    with pytest.raises(ManifestError):
        plan_episodes(m, 1, 1, negative=True)


def test_five_shot(tmp_path):
    m = DatasetManifest.load(write_suite(tmp_path, SuiteSpec(n_classes=2, per_class=6, resolution=32)))
    eps = sample_episodes(m, 5, 4, seed=0)
    assert all(e.shots == 5 for e in eps)


def test_suite_is_reproducible(tmp_path):
    spec = SuiteSpec(n_classes=2, per_class=2, resolution=32)
    a = DatasetManifest.load(write_suite(tmp_path / "a", spec))
    b = DatasetManifest.load(write_suite(tmp_path / "b", spec))
    for i in range(4):
        for x, y in zip(a.load_pair(i), b.load_pair(i)):
            np.testing.assert_array_equal(x, y)
