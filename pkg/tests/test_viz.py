import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refvid.core import PseudoVideoSequence
from refvid.errors import InputError
from refvid.ivos import TrackResult
from refvid.viz import (BORDER, GT_COLOR, GUTTER, PRED_COLOR, PROMPT_COLOR, blend, dashed_border, render_strip,
                        strip_width, visualize)

from conftest import disk


def seq_of(n, size=24, prompted=(0,)):
    frames = [np.full((size, size, 3), k / max(n - 1, 1)) for k in range(n)]
    m = disk((size, size), (12, 12), 5)
    prompts = [m if i in prompted else None for i in range(n)]
    return PseudoVideoSequence(frames, list(np.linspace(0, 1, n)), prompts)


@given(st.integers(0, 255), st.integers(0, 255), st.floats(0, 1))
def test_blend_pixel_oracle(v, c, a):
    frame = np.full((2, 2, 3), v, np.uint8)
    mask = np.array([[1, 0], [0, 0]], np.uint8)
    out = blend(frame, mask, (c, c, c), a)
    want = int(np.rint((1 - a) * v + a * c))
    assert (out[0, 0] == want).all()
    assert (out[1:, :] == v).all() and (out[0, 1] == v).all()


def test_border_is_dashed():
    out = dashed_border(np.zeros((20, 20, 3), np.uint8))
    top = (out[0] == PROMPT_COLOR).all(axis=1)
    assert top[:6].all() and not top[6:12].any() and top[12:18].all()
    assert (out[BORDER:-BORDER, BORDER:-BORDER] == 0).all()


def test_concat_strip():
    seq = seq_of(2)
    strip = render_strip(seq, [None, seq.prompts[0]], [seq.prompts[0], None])
    assert strip.shape == (24, strip_width(24, 2), 3) == (24, 48 + GUTTER, 3)
    left, right = strip[:, :24], strip[:, 24 + GUTTER:]
    assert (left[0, 0] == PROMPT_COLOR).all()
    assert not (right[0, 0] == PROMPT_COLOR).all()
    assert (strip[:, 24:24 + GUTTER] == 255).all()
    # the right panel carries only the prediction tint, the left only ground truth
    assert right[12, 12, 0] < right[12, 12, 1]
    assert left[12, 12, 0] > left[12, 12, 1]


def test_eleven_frame_strip_outlines_prompts():
    seq = seq_of(11, prompted=range(6))
    strip = render_strip(seq)
    corners = [(strip[0, i * (24 + GUTTER)] == PROMPT_COLOR).all() for i in range(11)]
    assert corners == [True] * 6 + [False] * 5


def test_inputs_untouched(tmp_path):
    seq = seq_of(3)
    before = [f.copy() for f in seq.frames]
    preds = [disk((24, 24), (5, 5), 3)] * 3
    visualize(None, seq, TrackResult(preds), tmp_path / "s.png")
    assert all(np.array_equal(a, b) for a, b in zip(before, seq.frames))
    assert (tmp_path / "s.png").exists()


def test_mask_count_checked():
    with pytest.raises(InputError):
        render_strip(seq_of(3), [None])


def test_colors_distinct():
    assert len({GT_COLOR, PRED_COLOR, PROMPT_COLOR}) == 3
