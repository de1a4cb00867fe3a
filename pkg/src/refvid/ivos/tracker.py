"""Tracker contract and the deterministic template-matching tracker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from ..core import PseudoVideoSequence, as_image, as_mask
from ..errors import InputError, TrackerError

# Patch size and search radius at a 512-pixel-wide canvas; scaled linearly
# with the actual frame width.
PATCH_AT_512 = 32
RADIUS_AT_512 = 16


@dataclass
class TrackerSession:
    frames: tuple
    prompts: tuple
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = tuple(as_image(f) for f in self.frames)
        if len(self.prompts) != len(self.frames):
            raise InputError("one prompt slot per frame is required")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise InputError("all frames must share a shape")
        self.prompts = tuple(None if p is None else as_mask(p, shape) for p in self.prompts)
        if all(p is None for p in self.prompts):
            raise InputError("at least one frame must carry a prompt")

    @classmethod
    def from_sequence(cls, seq: PseudoVideoSequence) -> "TrackerSession":
        return cls(tuple(seq.frames), tuple(seq.prompts))


@dataclass
class TrackResult:
    masks: List[np.ndarray]
    presence: List[Optional[float]] = field(default_factory=list)

    @property
    def target_mask(self) -> np.ndarray:
        return self.masks[-1]


@runtime_checkable
class Tracker(Protocol):
    def propagate(self, session: TrackerSession) -> TrackResult: ...


def _shift(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[y, x] = arr[y + dy, x + dx]`` with zeros outside the frame."""
    out = np.zeros_like(arr)
    h, w = arr.shape[:2]
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    yd = slice(max(0, dy), min(h, h + dy))
    xd = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = arr[yd, xd]
    return out


class MockTracker:
    """Dense normalised-cross-correlation tracker.

    For each unprompted frame the mask of the neighbouring frame on the path
    from the nearest prompted frame is warped by a per-pixel displacement
    field.  Each pixel's displacement maximises the patch NCC between the two
    frames over a square search window, with a small penalty on displacement
    length and ties resolved towards shorter displacements.  Every pixel is
    treated identically (zero padding outside the frame), so the tracker is
    exactly equivariant to integer translations of all inputs.

    Object memory starts from the mean colour under the earliest nonempty
    prompt, the annotated reference in every pipeline here.  Later prompts
    join memory only when their mean colour is within ``presence_threshold``
    of it, so a prompt on a different object steers its own frame but cannot
    vouch for that object downstream.  A propagated mask whose mean colour is
    farther than ``presence_threshold`` from all memory entries is declared
    lost and cleared; the track stays empty from there on.
    """

    def __init__(self, patch: Optional[int] = None, radius: Optional[int] = None,
                 presence_threshold: float = 0.2, motion_penalty: float = 1e-3, eps: float = 1e-6):
        self.patch = patch
        self.radius = radius
        self.presence_threshold = presence_threshold
        self.motion_penalty = motion_penalty
        self.eps = eps

    def geometry(self, width: int):
        patch = self.patch or max(3, int(round(PATCH_AT_512 * width / 512)))
        radius = self.radius if self.radius is not None else max(1, int(round(RADIUS_AT_512 * width / 512)))
        return patch, radius

    def displacement(self, cur: np.ndarray, prev: np.ndarray, width: Optional[int] = None):
        """Per-pixel ``(dy, dx)`` such that ``cur`` near ``x`` matches ``prev`` near ``x + d``.

        ``width`` sets the frame width the patch geometry is scaled from when
        the arrays are crops.
        """
        h, w = cur.shape[:2]
        patch, radius = self.geometry(width or w)
        box = lambda a: ndimage.uniform_filter(a, size=patch, mode="constant")  # noqa: E731
        mc = np.stack([box(cur[:, :, c]) for c in range(cur.shape[2])], axis=2)
        var_c = box((cur * cur).sum(axis=2)) - (mc * mc).sum(axis=2)
        # window statistics of every shifted ``prev`` are crops of one zero-padded filter pass
        pad = radius + patch
        ext = np.pad(prev, ((pad, pad), (pad, pad), (0, 0)))
        mp_ext = np.stack([box(ext[:, :, c]) for c in range(ext.shape[2])], axis=2)
        var_ext = box((ext * ext).sum(axis=2)) - (mp_ext * mp_ext).sum(axis=2)
        shifts = sorted(((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
                        key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
        best = np.full((h, w), -np.inf)
        best_ncc = np.zeros((h, w))
        disp = np.zeros((h, w, 2), dtype=int)
        for dy, dx in shifts:
            win = (slice(pad + dy, pad + dy + h), slice(pad + dx, pad + dx + w))
            p = ext[win]
            mp = mp_ext[win]
            var_p = var_ext[win]
            cov = box((cur * p).sum(axis=2)) - (mc * mp).sum(axis=2)
            denom = np.sqrt(np.maximum(var_c, 0.0) * np.maximum(var_p, 0.0))
            ncc = np.where(denom > self.eps, cov / np.maximum(denom, self.eps), 0.0)
            score = ncc - self.motion_penalty * (dy * dy + dx * dx)
            better = score > best
            best[better] = score[better]
            best_ncc[better] = ncc[better]
            disp[better] = (dy, dx)
        return disp, best_ncc

    @staticmethod
    def warp_mask(mask: np.ndarray, disp: np.ndarray) -> np.ndarray:
        h, w = mask.shape
        yy, xx = np.mgrid[0:h, 0:w]
        sy = yy + disp[:, :, 0]
        sx = xx + disp[:, :, 1]
        inside = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
        out = np.zeros_like(mask)
        out[inside] = mask[sy[inside], sx[inside]]
        return out

    def _warp_local(self, cur, prev_frame, prev_mask):
        """``warp_mask(prev_mask, displacement(cur, prev_frame))`` evaluated only where it can be nonzero.

        Output pixels farther than the search radius from the mask stay empty,
        and the window statistics inside the region only read pixels within
        ``radius + patch`` of it, so cropping with that margin is exact.
        """
        h, w = prev_mask.shape
        patch, radius = self.geometry(w)
        ys, xs = np.nonzero(prev_mask)
        y0, y1 = max(0, ys.min() - radius), min(h, ys.max() + radius + 1)
        x0, x1 = max(0, xs.min() - radius), min(w, xs.max() + radius + 1)
        m = radius + patch
        cy0, cy1 = max(0, y0 - m), min(h, y1 + m)
        cx0, cx1 = max(0, x0 - m), min(w, x1 + m)
        crop = (slice(cy0, cy1), slice(cx0, cx1))
        disp, _ = self.displacement(cur[crop], prev_frame[crop], width=w)
        local = self.warp_mask(prev_mask[crop], disp)
        out = np.zeros_like(prev_mask)
        roi = (slice(y0 - cy0, y1 - cy0), slice(x0 - cx0, x1 - cx0))
        out[y0:y1, x0:x1] = local[roi]
        return out

    @staticmethod
    def appearance(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return frame[mask.astype(bool)].mean(axis=0)

    @staticmethod
    def _distance(desc, memory) -> float:
        return min(float(np.linalg.norm(desc - m)) for m in memory)

    def _step(self, frames, masks, src: int, dst: int, memory) -> tuple:
        prev = masks[src]
        if not prev.any():
            return np.zeros_like(prev), None
        mask = self._warp_local(frames[dst], frames[src], prev)
        if not mask.any() or not memory:
            return mask, None
        dist = self._distance(self.appearance(frames[dst], mask), memory)
        if dist > self.presence_threshold:
            return np.zeros_like(mask), dist
        return mask, dist

    def propagate(self, session: TrackerSession) -> TrackResult:
        frames = session.frames
        prompts = session.prompts
        n = len(frames)
        prompted = [i for i, p in enumerate(prompts) if p is not None]
        if not prompted:
            raise InputError("no prompts to propagate")
        memory = []
        for i in prompted:
            if not prompts[i].any():
                continue
            desc = self.appearance(frames[i], prompts[i])
            if not memory or self._distance(desc, memory) <= self.presence_threshold:
                memory.append(desc)

        # each unprompted frame follows the nearest prompted frame (earlier one on ties)
        source = []
        for i in range(n):
            j = min(prompted, key=lambda k: (abs(k - i), k > i))
            source.append(j)

        masks: List[Optional[np.ndarray]] = [None] * n
        presence: List[Optional[float]] = [None] * n
        for i in prompted:
            masks[i] = prompts[i].copy()
        try:
            for i in range(n):
                if masks[i] is not None or source[i] > i:
                    continue
                # forward chain: frame i - 1 already resolved along the same path
                masks[i], presence[i] = self._step(frames, masks, i - 1, i, memory)
            for i in range(n - 1, -1, -1):
                if masks[i] is not None:
                    continue
                masks[i], presence[i] = self._step(frames, masks, i + 1, i, memory)
        except (ValueError, IndexError) as exc:
            raise TrackerError(f"propagation failed: {exc}") from exc
        return TrackResult([m.astype(np.uint8) for m in masks], presence)


def propagate(session: TrackerSession, tracker: Optional[Tracker] = None) -> TrackResult:
    if not isinstance(session, TrackerSession):
        session = TrackerSession.from_sequence(session)
    return (tracker or MockTracker()).propagate(session)
