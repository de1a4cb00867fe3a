import threading

import numpy as np
import pytest

from refvid.dbst import (PRESETS, AlphaSchedule, LatentNoise, SequenceCache, SyntheticMorphBackend,
                         generate_sequence, interpolate_adapter, load_sequence, make_alpha_schedule, slerp)
from refvid.dbst.sequence import quantize, sequence_key
from refvid.errors import CacheError, GenerationError, InputError

from conftest import disk


def scene(center, radius, color, size=48, seed=0):
    r = np.random.default_rng(seed)
    img = 0.4 + 0.05 * r.random((size, size, 3))
    m = disk((size, size), center, radius)
    img[m.astype(bool)] = color
    return np.clip(img, 0, 1), m


@pytest.fixture
def pair():
    ref, _ = scene((20, 18), 8, (0.9, 0.2, 0.2), seed=1)
    tgt, _ = scene((28, 30), 11, (0.2, 0.3, 0.9), seed=2)
    return ref, tgt


def test_round_trip_exact(pair):
    be = SyntheticMorphBackend()
    be.prepare(PRESETS["fast"])
    for img in pair:
        out = be.denoise(be.invert(img), be.fit_adapter(img))
        np.testing.assert_allclose(out, img, atol=1e-9)


def test_pose_tracks_object():
    img, m = scene((30, 12), 7, (0.9, 0.9, 0.1))
    cy, cx, _ = SyntheticMorphBackend().estimate_pose(img)
    ys, xs = np.nonzero(m)
    assert abs(cy - ys.mean()) < 1.0 and abs(cx - xs.mean()) < 1.0


def closed_form_morph(be, ref, tgt, a):
    # the morph written out by hand: blend poses and aligned appearance linearly,
    # mix the detail latents along the great circle, render at the blended pose
    d_r, d_t = be.fit_adapter(ref), be.fit_adapter(tgt)
    z_r, z_t = be.invert(ref).z, be.invert(tgt).z
    phi = np.arccos(np.dot(z_r, z_t) / (np.linalg.norm(z_r) * np.linalg.norm(z_t)))
    z = (np.sin((1 - a) * phi) * z_r + np.sin(a * phi) * z_t) / np.sin(phi)
    pose = (1 - a) * d_r.tensors["pose"] + a * d_t.tensors["pose"]
    app = (1 - a) * d_r.tensors["appearance"] + a * d_t.tensors["appearance"]
    n = app.size
    detail = z[:n].reshape(app.shape)
    residual = z[n:].reshape(ref.shape)
    return quantize(np.clip(be._from_canvas(app + detail, pose, ref.shape) + residual, 0, 1))


def test_middle_frame_is_closed_form_morph(pair):
    ref, tgt = pair
    be = SyntheticMorphBackend()
    seq = generate_sequence(ref, tgt, AlphaSchedule([0.5]), be, preset="fast")
    assert len(seq) == 3 and seq.alphas == [0.0, 0.5, 1.0]
    np.testing.assert_allclose(seq.frames[1], closed_form_morph(be, ref, tgt, 0.5), atol=1e-12)
    assert seq.frames[0] is not None and np.array_equal(seq.frames[0], ref)
    assert np.array_equal(seq.frames[-1], tgt)


def test_morph_moves_object_between_poses(pair):
    ref, tgt = pair
    be = SyntheticMorphBackend()
    seq = generate_sequence(ref, tgt, make_alpha_schedule(3, 0.25, 0.75), be, preset="fast")
    centres = [be.estimate_pose(f)[1] for f in seq.frames]
    assert all(b > a for a, b in zip(centres, centres[1:]))


def test_sequence_shapes(pair):
    ref, tgt = pair
    seq = generate_sequence(ref, tgt, make_alpha_schedule(9), SyntheticMorphBackend(), preset="fast")
    assert len(seq) == 11
    assert seq.alphas[0] == 0.0 and seq.alphas[-1] == 1.0
    assert all(b > a for a, b in zip(seq.alphas, seq.alphas[1:]))


def test_empty_schedule_is_concat(pair):
    ref, tgt = pair
    be = SyntheticMorphBackend()
    seq = generate_sequence(ref, tgt, AlphaSchedule([]), be)
    assert len(seq) == 2 and be.fitted == 0


def test_resolution_mismatch(pair):
    with pytest.raises(InputError):
        generate_sequence(pair[0], pair[1][:40], AlphaSchedule([0.5]), SyntheticMorphBackend())


class Exploding(SyntheticMorphBackend):
    """Renders the first frame, then fails."""

    calls = 0

    def denoise(self, latent, delta):
        self.calls += 1
        if self.calls > 1:
            raise RuntimeError("out of memory")
        return super().denoise(latent, delta)


def test_backend_failure_reports_alpha(pair):
    with pytest.raises(GenerationError) as err:
        generate_sequence(pair[0], pair[1], AlphaSchedule([0.3, 0.6]), Exploding(), preset="fast")
    assert err.value.alpha == pytest.approx(0.6)


def test_cache_hit_is_bit_identical(pair, tmp_path):
    ref, tgt = pair
    cache = SequenceCache(tmp_path)
    sched = make_alpha_schedule(4)
    be = SyntheticMorphBackend()
    first = generate_sequence(ref, tgt, sched, be, preset="fast", seed=3, cache=cache)
    fitted = be.fitted
    second = generate_sequence(ref, tgt, sched, be, preset="fast", seed=3, cache=cache)
    assert be.fitted == fitted  # served from disk
    fresh = generate_sequence(ref, tgt, sched, SyntheticMorphBackend(), preset="fast", seed=3)
    for a, b, c in zip(first.frames, second.frames, fresh.frames):
        assert np.array_equal(a, b) and np.array_equal(a, c)
    key = sequence_key(ref, tgt, sched, PRESETS["fast"], 3, "SyntheticMorphBackend")
    assert sorted(p.name for p in (tmp_path / key).iterdir())[:2] == ["frame_000.png", "frame_001.png"]


def test_cache_key_separates_settings(pair):
    ref, tgt = pair
    sched = make_alpha_schedule(2)
    keys = {sequence_key(ref, tgt, sched, PRESETS["fast"], 0), sequence_key(ref, tgt, sched, PRESETS["fast"], 1),
            sequence_key(ref, tgt, sched, PRESETS["standard"], 0), sequence_key(tgt, ref, sched, PRESETS["fast"], 0)}
    assert len(keys) == 4


def test_concurrent_cache_writers(pair, tmp_path):
    ref, tgt = pair
    cache = SequenceCache(tmp_path)
    sched = make_alpha_schedule(2)
    errors = []

    def work():
        try:
            generate_sequence(ref, tgt, sched, SyntheticMorphBackend(), preset="fast", cache=cache)
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    dirs = [p for p in tmp_path.iterdir()]
    assert len(dirs) == 1 and len(load_sequence(dirs[0])) == 4


def test_corrupt_cache(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(CacheError):
        load_sequence(tmp_path)


def test_contract_pieces_compose(pair):
    # generate_sequence is exactly denoise(slerp, interpolate_adapter) per alpha
    ref, tgt = pair
    be = SyntheticMorphBackend()
    be.prepare(PRESETS["fast"])
    frame = be.denoise(slerp(be.invert(ref), be.invert(tgt), 0.3),
                       interpolate_adapter(be.fit_adapter(ref), be.fit_adapter(tgt), 0.3))
    seq = generate_sequence(ref, tgt, AlphaSchedule([0.3]), SyntheticMorphBackend(), preset="fast")
    np.testing.assert_array_equal(seq.frames[1], quantize(frame))
    assert isinstance(be.invert(ref), LatentNoise)
