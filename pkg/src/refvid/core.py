"""Domain types, mask arithmetic and the segmentation metric.

Images are float arrays of shape ``(H, W, C)`` with values in ``[0, 1]`` and
``C`` in ``{1, 3}``; masks are ``uint8`` arrays of shape ``(H, W)`` holding 0 or
1.  Both are plain numpy arrays; :func:`as_image` and :func:`as_mask` validate
and normalise inputs at module boundaries.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image as PILImage

from .errors import InputError

DEFAULT_RESOLUTION = (512, 512)
REPORT_SCHEMA_VERSION = 1


def as_image(pixels) -> np.ndarray:
    """Validate ``pixels`` as an image and return it as a float64 HxWxC array."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise InputError(f"image must be HxW or HxWxC with C in (1, 3), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError("image must be at least 1x1")
    if not np.all(np.isfinite(arr)):
        raise InputError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError("image values must lie in [0, 1]")
    return arr


def as_mask(values, shape: Optional[tuple] = None) -> np.ndarray:
    """Validate ``values`` as a binary mask and return it as uint8 {0, 1}."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise InputError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype == bool:
        out = arr.astype(np.uint8)
    else:
        if not np.all((arr == 0) | (arr == 1)):
            raise InputError("mask entries must be 0 or 1")
        out = arr.astype(np.uint8)
    if shape is not None and out.shape != tuple(shape[:2]):
        raise InputError(f"mask shape {out.shape} does not match image shape {tuple(shape[:2])}")
    return out


@dataclass
class Episode:
    """One reference-segmentation task: K annotated references and a target."""

    references: list  # list of (image, mask)
    target: np.ndarray
    target_gt: Optional[np.ndarray] = None
    class_id: str = ""
    dataset_id: str = ""
    episode_id: str = ""

    def __post_init__(self):
        if len(self.references) < 1:
            raise InputError("an episode needs at least one reference")
        refs = []
        for img, m in self.references:
            img = as_image(img)
            m = as_mask(m, img.shape)
            if not m.any():
                raise InputError("reference masks must contain foreground")
            refs.append((img, m))
        self.references = refs
        self.target = as_image(self.target)
        if self.target_gt is not None:
            self.target_gt = as_mask(self.target_gt, self.target.shape)

    @property
    def shots(self) -> int:
        return len(self.references)


@dataclass
class PseudoVideoSequence:
    """Frames from the reference (alpha 0) to the target (alpha 1).

    ``prompts[i]`` is the mask prompt for frame ``i`` or ``None``.
    """

    frames: list
    alphas: list
    prompts: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise InputError("a pseudo video needs at least the reference and target frames")
        if len(self.alphas) != len(self.frames):
            raise InputError("one alpha per frame is required")
        if self.alphas[0] != 0.0 or self.alphas[-1] != 1.0:
            raise InputError("alphas must start at 0 and end at 1")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise InputError("alphas must be strictly increasing")
        if not self.prompts:
            self.prompts = [None] * len(self.frames)
        if len(self.prompts) != len(self.frames):
            raise InputError("one prompt slot per frame is required")

    def __len__(self):
        return len(self.frames)

    @property
    def n_generated(self) -> int:
        return len(self.frames) - 2

    @property
    def prompted_indices(self) -> list:
        return [i for i, p in enumerate(self.prompts) if p is not None]

    def with_prompts(self, prompts) -> "PseudoVideoSequence":
        return PseudoVideoSequence(list(self.frames), list(self.alphas), list(prompts))


@dataclass
class EvaluationReport:
    per_episode: list  # list of (episode_id, class_id, iou)
    per_class: dict
    aggregate_miou: float
    config_fingerprint: str = ""
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config_fingerprint": self.config_fingerprint,
            "aggregate_miou": self.aggregate_miou,
            "per_class": {k: self.per_class[k] for k in sorted(self.per_class)},
            "per_episode": [
                {"episode_id": e, "class_id": c, "iou": v} for e, c, v in self.per_episode
            ],
            "failures": list(self.failures),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise InputError(f"unsupported report schema version {d.get('schema_version')!r}")
        return cls(
            per_episode=[(r["episode_id"], r["class_id"], r["iou"]) for r in d["per_episode"]],
            per_class=dict(d["per_class"]),
            aggregate_miou=d["aggregate_miou"],
            config_fingerprint=d.get("config_fingerprint", ""),
            failures=list(d.get("failures", [])),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "EvaluationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def iou(a, b) -> float:
    """Foreground intersection over union; two empty masks score 1."""
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise InputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def aggregate_miou(per_episode: Iterable[Sequence], config_fingerprint: str = "") -> EvaluationReport:
    """Class-balanced mean IoU.

    ``per_episode`` holds ``(class_id, iou)`` or ``(episode_id, class_id, iou)``
    records.  IoUs are averaged within each class, then the class means are
    averaged with equal weight.  Sums use :func:`math.fsum`, which is correctly
    rounded and therefore independent of record order, so the aggregate can be
    recomputed bit-for-bit from the per-episode list.
    """
    records = []
    for i, rec in enumerate(per_episode):
        if len(rec) == 2:
            records.append((f"{i:06d}", str(rec[0]), float(rec[1])))
        elif len(rec) == 3:
            records.append((str(rec[0]), str(rec[1]), float(rec[2])))
        else:
            raise InputError(f"bad per-episode record {rec!r}")
    if not records:
        raise InputError("cannot aggregate an empty result list")
    by_class: dict = {}
    for _, cls_id, v in records:
        by_class.setdefault(cls_id, []).append(v)
    per_class = {c: math.fsum(v) / len(v) for c, v in sorted(by_class.items())}
    aggregate = math.fsum(per_class.values()) / len(per_class)
    records.sort(key=lambda r: r[0])
    return EvaluationReport(records, per_class, aggregate, config_fingerprint)


def _linear_axis(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_array(arr, size) -> np.ndarray:
    """Bilinear resize of an HxW or HxWxC float array with half-pixel centres."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = _check_size(size)
    if (h, w) == arr.shape[:2]:
        return arr.copy()
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    lo, hi, t = _linear_axis(arr.shape[0], h)
    rows = arr[lo] + t[:, None, None] * (arr[hi] - arr[lo])
    lo, hi, t = _linear_axis(arr.shape[1], w)
    out = rows[:, lo] + t[None, :, None] * (rows[:, hi] - rows[:, lo])
    return out[:, :, 0] if squeeze else out


def resize_image(img, size) -> np.ndarray:
    """Bilinear image resize; values stay in [0, 1]."""
    return np.clip(resize_array(as_image(img), size), 0.0, 1.0)


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(int), n_in - 1)


def resize_mask(mask, size) -> np.ndarray:
    """Nearest-neighbour resize; the result stays binary."""
    mask = as_mask(mask)
    h, w = _check_size(size)
    return mask[nearest_indices(mask.shape[0], h)][:, nearest_indices(mask.shape[1], w)]


def resize_pair(img, mask, size):
    img = as_image(img)
    mask = as_mask(mask, img.shape)
    return resize_image(img, size), resize_mask(mask, size)


def _check_size(size):
    h, w = (int(size[0]), int(size[1]))
    if h <= 0 or w <= 0:
        raise InputError(f"target size must be positive, got {size}")
    return h, w


def foreground_fraction(mask) -> float:
    mask = np.asarray(mask)
    return float(np.count_nonzero(mask)) / mask.size


# -- file IO ---------------------------------------------------------------

def read_image(path, size=None) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return resize_image(arr, size) if size is not None else arr


def write_image(path, img) -> None:
    img = as_image(img)
    u8 = np.round(img * 255.0).astype(np.uint8)
    if u8.shape[2] == 1:
        u8 = u8[:, :, 0]
    PILImage.fromarray(u8).save(path)


def read_mask(path, size=None) -> np.ndarray:
    """Read a single-channel PNG mask (0 background, 255 foreground)."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    mask = (arr > 127).astype(np.uint8)
    return resize_mask(mask, size) if size is not None else mask


def write_mask(path, mask) -> None:
    mask = as_mask(mask)
    PILImage.fromarray((mask * 255).astype(np.uint8)).save(path)
