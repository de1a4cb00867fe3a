import json

import numpy as np
import pytest

from refvid.core import Episode
from refvid.errors import InputError
from refvid.ttga import TTGAConfig, ToyExtractor, class_prototype, finetune, medoid_reference
from refvid.ttga.finetune import Adam, consistency_loss, cosine_lr
from refvid.ttga.ops import masked_average_pool

from conftest import disk


def separable_episode(seed, size=48):
    r = np.random.default_rng(seed)
    img = 0.35 + 0.1 * r.random((size, size, 3))
    m = disk((size, size), r.integers(16, 32, 2), r.integers(7, 12))
    img[m.astype(bool)] = np.array([0.85, 0.3, 0.2]) + 0.05 * r.random(3)
    return Episode(references=[(img, m)], target=img, target_gt=m, class_id="x")


def test_cosine_lr_schedule():
    assert cosine_lr(1e-3, 0, 100) == 1e-3
    assert cosine_lr(1e-3, 50, 100) == pytest.approx(5e-4)
    assert cosine_lr(1e-3, 100, 100) == pytest.approx(0.0, abs=1e-18)


def test_adam_first_step_is_lr_sign():
    d = Adam().deltas({"w": np.array([3.0, -0.2])}, 0.1)
    np.testing.assert_allclose(d["w"], [-0.1, 0.1], rtol=1e-6)


def test_zero_steps_leave_parameters_bit_identical():
    ex = ToyExtractor()
    before = ex.tail.copy()
    res = finetune(separable_episode(0), ex, TTGAConfig(steps=0))
    assert np.array_equal(res.extractor.tail, before)
    assert np.array_equal(ex.tail, before)
    assert res.history == []


def test_finetune_leaves_input_untouched():
    ex = ToyExtractor()
    before = ex.tail.copy()
    res = finetune(separable_episode(1), ex, TTGAConfig(steps=5))
    assert np.array_equal(ex.tail, before)
    assert not np.array_equal(res.extractor.tail, before)


def test_loss_decreases_on_most_episodes():
    wins = 0
    for seed in range(6):
        res = finetune(separable_episode(seed), ToyExtractor(), TTGAConfig(steps=40, seed=seed))
        wins += res.final_loss < res.initial_loss
    assert wins >= 5


def consistency_total(ex, ep, aug, strategy):
    la, lc, _, _ = consistency_loss(ex, ep.references[0][0], ep.references[0][1], aug.image, aug.mask, strategy,
                                    with_grad=False)
    return la + (lc or 0.0)


@pytest.mark.parametrize("strategy", ["acc", "abc"])
def test_consistency_gradient_fd(strategy):
    from refvid.ttga.augment import augment

    ep = separable_episode(3, size=32)
    aug = augment(ep.references[0][0], ep.references[0][1], 5)
    ex = ToyExtractor(dim=6)
    _, _, _, grads = consistency_loss(ex, ep.references[0][0], ep.references[0][1], aug.image, aug.mask, strategy)
    g = grads["tail"]
    h = 1e-6
    r = np.random.default_rng(0)
    # the pseudo-label is piecewise constant in the parameters; small probes stay on one piece
    for _ in range(8):
        i, j = r.integers(ex.tail.shape[0]), r.integers(ex.tail.shape[1])
        old = ex.tail[i, j]
        ex.tail[i, j] = old + h
        up = consistency_total(ex, ep, aug, strategy)
        ex.tail[i, j] = old - h
        down = consistency_total(ex, ep, aug, strategy)
        ex.tail[i, j] = old
        assert g[i, j] == pytest.approx((up - down) / (2 * h), abs=1e-6)


def test_acc_and_abc_differ_only_in_pooling_mask():
    from refvid.ttga.augment import augment

    ep = separable_episode(4)
    aug = augment(ep.references[0][0], ep.references[0][1], 2)
    ex = ToyExtractor()
    a = consistency_loss(ex, *ep.references[0], aug.image, aug.mask, "acc", with_grad=False)
    b = consistency_loss(ex, *ep.references[0], aug.image, aug.mask, "abc", with_grad=False)
    assert a[0] == b[0]  # identical augmentation term
    with pytest.raises(InputError):
        consistency_loss(ex, *ep.references[0], aug.image, aug.mask, "xyz")


def test_history_log(tmp_path):
    res = finetune(separable_episode(2), ToyExtractor(), TTGAConfig(steps=3))
    res.write_log(tmp_path / "log.jsonl")
    rows = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1, 2]
    assert {"loss", "loss_aug", "loss_cyc", "lr", "pseudo_fg_fraction"} <= set(rows[0])


def test_kshot_prototype_and_medoid():
    eps = [separable_episode(s) for s in range(3)]
    refs = [e.references[0] for e in eps]
    ex = ToyExtractor()
    protos = [masked_average_pool(ex.encode(i), _feature(ex, i, m)) for i, m in refs]
    np.testing.assert_allclose(class_prototype(ex, refs), np.mean(protos, axis=0), atol=1e-12)
    assert 0 <= medoid_reference(ex, refs) < 3
    ep = Episode(references=refs, target=refs[0][0])
    res = finetune(ep, ex, TTGAConfig(steps=3))
    assert [h.reference for h in res.history] == [0, 1, 2]


def _feature(ex, img, m):
    from refvid.core import resize_mask

    return resize_mask(m, ex.encode(img).shape[:2])


def test_config_validation():
    with pytest.raises(InputError):
        TTGAConfig(steps=-1)
    with pytest.raises(InputError):
        TTGAConfig(temperature=0)
