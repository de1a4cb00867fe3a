"""Heuristic pseudo-video builders used as comparison points.

All three return sequences with the reference mask on frame 0, so they plug
straight into the tracker.
"""
from __future__ import annotations

import numpy as np

from .core import PseudoVideoSequence, as_image, as_mask
from .dbst.interp import AlphaSchedule
from .errors import InputError
from .ttga.augment import DEFAULT_RANGES, AffineParams, AffineRanges, apply_affine, sample_affine
from .ttga.prompts import prompt_slots


def concat_sequence(ref, tgt, ref_mask=None) -> PseudoVideoSequence:
    """The two-frame sequence ``[ref, tgt]``."""
    ref = as_image(ref)
    tgt = as_image(tgt)
    prompts = [None if ref_mask is None else as_mask(ref_mask, ref.shape), None]
    return PseudoVideoSequence([ref, tgt], [0.0, 1.0], prompts)


def mixup_sequence(ref, tgt, schedule: AlphaSchedule, ref_mask=None) -> PseudoVideoSequence:
    """Pixelwise cross-dissolves ``(1 - a) * ref + a * tgt`` for each ``a`` in ``schedule``."""
    ref = as_image(ref)
    tgt = as_image(tgt)
    if ref.shape != tgt.shape:
        raise InputError("reference and target must share a resolution")
    if not isinstance(schedule, AlphaSchedule):
        schedule = AlphaSchedule(list(schedule))
    frames = [ref] + [(1.0 - a) * ref + a * tgt for a in schedule] + [tgt]
    alphas = [0.0] + list(schedule.values) + [1.0]
    prompts = [None] * len(frames)
    if ref_mask is not None:
        prompts[0] = as_mask(ref_mask, ref.shape)
    return PseudoVideoSequence(frames, alphas, prompts)


def ramp_params(base: AffineParams, strength: float) -> AffineParams:
    """Scale a full-strength transform towards the identity."""
    return AffineParams(
        angle_deg=strength * base.angle_deg,
        scale=1.0 + strength * (base.scale - 1.0),
        ty=strength * base.ty,
        tx=strength * base.tx,
        flip=base.flip and strength >= 0.5,
    )


def affine_sequence(ref, mask, tgt, n: int, seed, ranges: AffineRanges = DEFAULT_RANGES,
                    prompt_intermediate: bool = False) -> PseudoVideoSequence:
    """Reference warped by a progressively stronger random affine, then the target.

    Frame ``k`` of ``n`` uses ``k / (n + 1)`` of one full-strength transform
    drawn from ``ranges``.  With ``prompt_intermediate`` the warped reference
    masks prompt the first half of the frames.
    """
    if n < 1:
        raise InputError("affine_sequence needs at least one intermediate frame")
    ref = as_image(ref)
    mask = as_mask(mask, ref.shape)
    tgt = as_image(tgt)
    rng = np.random.default_rng(seed)
    base = None
    for _ in range(10):
        base, _ = sample_affine(rng, 1.0, ranges)
        if apply_affine(ref, mask, base)[1].any():
            break
    frames = [ref]
    warped_masks = [mask]
    for k in range(1, n + 1):
        img, m = apply_affine(ref, mask, ramp_params(base, k / (n + 1)))
        frames.append(img)
        warped_masks.append(m)
    frames.append(tgt)
    alphas = [0.0] + [k / (n + 1) for k in range(1, n + 1)] + [1.0]
    prompts = [None] * len(frames)
    prompts[0] = mask
    if prompt_intermediate:
        for i in prompt_slots(len(frames)):
            if warped_masks[i].any():
                prompts[i] = warped_masks[i]
    seq = PseudoVideoSequence(frames, alphas, prompts)
    seq.warped_masks = warped_masks
    return seq
