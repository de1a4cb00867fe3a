"""Composite strip images of a tracked pseudo video."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core import PseudoVideoSequence, as_image, as_mask
from .errors import InputError

GT_COLOR = (200, 0, 200)
PRED_COLOR = (0, 200, 200)
PROMPT_COLOR = (0, 200, 0)
OVERLAY_ALPHA = 0.5
GUTTER = 4
DASH = 6
BORDER = 2


def blend(frame: np.ndarray, mask: np.ndarray, color, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """``(1 - alpha) * frame + alpha * color`` on the mask, ``frame`` elsewhere (uint8 in, uint8 out)."""
    out = frame.astype(np.float64)
    m = mask.astype(bool)
    out[m] = (1.0 - alpha) * out[m] + alpha * np.asarray(color, dtype=np.float64)
    return np.rint(out).astype(np.uint8)


def dashed_border(panel: np.ndarray, color=PROMPT_COLOR, width: int = BORDER, dash: int = DASH) -> np.ndarray:
    """Draw a dashed rectangle along the panel edge; on and off segments are ``dash`` pixels."""
    out = panel.copy()
    h, w = out.shape[:2]
    on_x = (np.arange(w) // dash) % 2 == 0
    on_y = (np.arange(h) // dash) % 2 == 0
    out[:width, on_x] = color
    out[h - width:, on_x] = color
    out[on_y, :width] = color
    out[on_y, w - width:] = color
    return out


def strip_width(width: int, panels: int, gutter: int = GUTTER) -> int:
    return width * panels + gutter * (panels - 1)


def render_strip(seq: PseudoVideoSequence, pred_masks=None, gt_masks=None, gutter: int = GUTTER) -> np.ndarray:
    """Frames left to right with ground truth, predictions and prompt outlines.

    ``gt_masks`` and ``pred_masks`` are per-frame lists whose entries may be
    ``None``.  Inputs are not modified.
    """
    n = len(seq.frames)
    pred_masks = list(pred_masks) if pred_masks is not None else [None] * n
    gt_masks = list(gt_masks) if gt_masks is not None else [None] * n
    if len(pred_masks) != n or len(gt_masks) != n:
        raise InputError("one mask slot per frame is required")
    h, w = seq.frames[0].shape[:2]
    canvas = np.full((h, strip_width(w, n, gutter), 3), 255, dtype=np.uint8)
    for i, frame in enumerate(seq.frames):
        img = as_image(frame)
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        panel = np.rint(img * 255).astype(np.uint8)
        if gt_masks[i] is not None:
            panel = blend(panel, as_mask(gt_masks[i], (h, w)), GT_COLOR)
        if pred_masks[i] is not None:
            panel = blend(panel, as_mask(pred_masks[i], (h, w)), PRED_COLOR)
        if seq.prompts[i] is not None:
            panel = dashed_border(panel)
        x0 = i * (w + gutter)
        canvas[:, x0:x0 + w] = panel
    return canvas


def visualize(episode, seq: PseudoVideoSequence, result, out_path, gutter: int = GUTTER) -> Path:
    """Write the strip for a finished run.

    Frame 0 shows the reference ground truth and the last frame the target
    ground truth when the episode has one; every frame shows its prediction.
    """
    n = len(seq)
    gt = [None] * n
    gt[0] = seq.prompts[0]
    if episode is not None and getattr(episode, "target_gt", None) is not None:
        gt[-1] = episode.target_gt
    preds = list(result.masks) if result is not None else None
    strip = render_strip(seq, preds, gt, gutter)
    out_path = Path(out_path)
    try:
        Image.fromarray(strip).save(out_path)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot write strip to {out_path}: {exc}") from exc
    return out_path
