"""Geometric and photometric augmentation with pixel-corresponding masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..core import as_image, as_mask
from ..errors import EmptySupportError


@dataclass(frozen=True)
class AffineRanges:
    max_rotation_deg: float = 25.0
    max_scale_delta: float = 0.2
    max_translation: float = 0.1  # fraction of image size
    flip_prob: float = 0.5
    max_brightness: float = 0.1
    max_contrast_delta: float = 0.2
    max_saturation_delta: float = 0.2


DEFAULT_RANGES = AffineRanges()


@dataclass(frozen=True)
class AffineParams:
    angle_deg: float = 0.0
    scale: float = 1.0
    ty: float = 0.0
    tx: float = 0.0
    flip: bool = False

    @property
    def is_identity(self) -> bool:
        return self.angle_deg == 0.0 and self.scale == 1.0 and self.ty == 0.0 and self.tx == 0.0 and not self.flip

    def matrix(self) -> np.ndarray:
        """Forward 2x2 map in (row, col) coordinates about the image centre."""
        a = np.deg2rad(self.angle_deg)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        flip = np.diag([1.0, -1.0 if self.flip else 1.0])
        return self.scale * rot @ flip


@dataclass(frozen=True)
class Photometric:
    brightness: float = 0.0
    contrast: float = 1.0
    saturation: float = 1.0

    @property
    def is_identity(self) -> bool:
        return self.brightness == 0.0 and self.contrast == 1.0 and self.saturation == 1.0


@dataclass
class AugmentedPair:
    image: np.ndarray
    mask: np.ndarray
    transform: AffineParams
    photometric: Photometric = Photometric()


def sample_affine(rng: np.random.Generator, strength: float = 1.0, ranges: AffineRanges = DEFAULT_RANGES):
    if strength == 0.0:
        return AffineParams(), Photometric()
    u = lambda: rng.uniform(-1.0, 1.0)  # noqa: E731
    params = AffineParams(
        angle_deg=strength * ranges.max_rotation_deg * u(),
        scale=1.0 + strength * ranges.max_scale_delta * u(),
        ty=strength * ranges.max_translation * u(),
        tx=strength * ranges.max_translation * u(),
        flip=bool(rng.uniform() < ranges.flip_prob * strength),
    )
    photo = Photometric(
        brightness=strength * ranges.max_brightness * u(),
        contrast=1.0 + strength * ranges.max_contrast_delta * u(),
        saturation=1.0 + strength * ranges.max_saturation_delta * u(),
    )
    return params, photo


def warp(array: np.ndarray, params: AffineParams, order: int, mode: str) -> np.ndarray:
    """Apply ``params`` to a 2-D or HxWxC array (output and input share a grid)."""
    if params.is_identity:
        return array.copy()
    h, w = array.shape[:2]
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([params.ty * h, params.tx * w])
    inv = np.linalg.inv(params.matrix())
    offset = centre - inv @ (centre + shift)
    if array.ndim == 2:
        return ndimage.affine_transform(array, inv, offset=offset, order=order, mode=mode)
    return np.stack([ndimage.affine_transform(array[:, :, c], inv, offset=offset, order=order, mode=mode)
                     for c in range(array.shape[2])], axis=2)


def jitter(image: np.ndarray, photo: Photometric) -> np.ndarray:
    if photo.is_identity:
        return image.copy()
    mean = image.mean()
    out = (image - mean) * photo.contrast + mean + photo.brightness
    if out.shape[2] == 3:
        gray = out.mean(axis=2, keepdims=True)
        out = gray + (out - gray) * photo.saturation
    return np.clip(out, 0.0, 1.0)


def apply_affine(image, mask, params: AffineParams, photo: Photometric = Photometric()):
    img = as_image(image)
    m = as_mask(mask, img.shape)
    out_img = jitter(np.clip(warp(img, params, order=1, mode="nearest"), 0.0, 1.0), photo)
    out_mask = warp(m, params, order=0, mode="constant").astype(np.uint8)
    return out_img, out_mask


def augment(image, mask, seed, strength: float = 1.0, ranges: AffineRanges = DEFAULT_RANGES,
            max_retries: int = 10) -> AugmentedPair:
    """Random affine + photometric augmentation, deterministic in ``seed``.

    The mask follows the affine part exactly; photometric jitter touches only
    the image.  Transforms that push all foreground out of frame are resampled.
    """
    img = as_image(image)
    m = as_mask(mask, img.shape)
    if not m.any():
        raise EmptySupportError("cannot augment a pair with an empty mask")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_retries):
        params, photo = sample_affine(rng, strength, ranges)
        out_img, out_mask = apply_affine(img, m, params, photo)
        if out_mask.any():
            return AugmentedPair(out_img, out_mask, params, photo)
    raise EmptySupportError(f"augmentation lost all foreground after {max_retries} attempts")
