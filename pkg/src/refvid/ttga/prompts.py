"""Turn prototype activations on generated frames into mask prompts."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..core import Episode, PseudoVideoSequence, resize_array
from ..errors import DegenerateMapError
from .ops import binarize, otsu_threshold, similarity_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GateConfig:
    """Bounds on a pseudo-label's foreground fraction for it to become a prompt."""

    min_fg: float = 0.001
    max_fg: float = 0.95


def prompt_slots(n_frames: int) -> List[int]:
    """Generated-frame indices eligible for a pseudo-label prompt.

    The first half of the sequence, ``1 .. n_frames // 2``, never including
    the final (target) frame.
    """
    return list(range(1, min(n_frames // 2, n_frames - 2) + 1))


def activate(extractor, image, prototype) -> np.ndarray:
    """Cosine-similarity map of ``image`` against ``prototype`` at image resolution."""
    sim = similarity_map(extractor.encode(image), prototype)
    return resize_array(sim, image.shape[:2])


def pseudo_label(extractor, image, prototype, gate: GateConfig = GateConfig()):
    """Otsu-binarised activation, or ``None`` when the gate rejects the frame."""
    sim = activate(extractor, image, prototype)
    try:
        label = binarize(sim, otsu_threshold(sim))
    except DegenerateMapError:
        return None, "degenerate"
    fg = float(label.mean())
    if not gate.min_fg <= fg <= gate.max_fg:
        return None, f"foreground fraction {fg:.4f} outside gate"
    return label, "ok"


def make_prompts(seq: PseudoVideoSequence, episode: Episode, extractor, prototype,
                 gate: GateConfig = GateConfig(), reference_index: Optional[int] = None,
                 events: Optional[list] = None) -> PseudoVideoSequence:
    """Prompt frame 0 with its ground-truth mask and the first half with pseudo-labels.

    Gated frames stay unprompted; the reasons are appended to ``events`` when
    given and logged at debug level.
    """
    if reference_index is None:
        reference_index = next(
            (i for i, (img, _) in enumerate(episode.references)
             if img.shape == seq.frames[0].shape and np.array_equal(img, seq.frames[0])),
            0,
        )
    prompts = [None] * len(seq)
    prompts[0] = episode.references[reference_index][1]
    for i in prompt_slots(len(seq)):
        label, why = pseudo_label(extractor, seq.frames[i], prototype, gate)
        if label is None:
            log.debug("frame %d left unprompted: %s", i, why)
        if events is not None:
            events.append({"frame": i, "status": why})
        prompts[i] = label
    return seq.with_prompts(prompts)
