"""Feature extractors used for prototype activation.

An extractor maps an image to an ``(H/stride, W/stride, D)`` feature grid.
Only the parameters named in ``tunable`` are adapted at test time; the
backbone is frozen.  ``encode_vjp`` returns the features together with a
function pulling a feature-space gradient back onto the tunable parameters,
which keeps the fine-tuning loop independent of any autodiff framework.
"""
from __future__ import annotations

import copy
from collections import OrderedDict
from typing import Callable, Dict, Protocol, Tuple, runtime_checkable

import numpy as np
from scipy import ndimage

from ..core import as_image


@runtime_checkable
class FeatureExtractor(Protocol):
    stride: int
    tunable: frozenset

    def encode(self, image) -> np.ndarray: ...

    def encode_vjp(self, image) -> Tuple[np.ndarray, Callable[[np.ndarray], Dict[str, np.ndarray]]]: ...

    def parameters(self) -> Dict[str, np.ndarray]: ...

    def apply_update(self, deltas: Dict[str, np.ndarray]) -> None: ...

    def copy(self) -> "FeatureExtractor": ...


def block_mean(arr: np.ndarray, stride: int) -> np.ndarray:
    """Average-pool an HxWxC array by non-overlapping ``stride`` blocks (cropping the remainder)."""
    h, w = arr.shape[0] // stride, arr.shape[1] // stride
    a = arr[: h * stride, : w * stride]
    return a.reshape(h, stride, w, stride, *a.shape[2:]).mean(axis=(1, 3))


class ToyExtractor:
    """Fixed filter-bank backbone followed by a learnable 1x1 projection.

    Backbone channels, each standardised over the image: centred colour at
    two scales, oriented gradient energy at four angles, and local luminance
    variance.  The projection ``tail`` (``n_backbone x dim``) plays the part of
    the adapted neck.
    """

    N_BACKBONE = 11
    CACHE_SIZE = 16

    def __init__(self, dim: int = 16, stride: int = 2, seed: int = 0, trainable: bool = True):
        self.stride = int(stride)
        self.dim = int(dim)
        rng = np.random.default_rng(seed)
        if self.dim >= self.N_BACKBONE:
            q, _ = np.linalg.qr(rng.standard_normal((self.dim, self.N_BACKBONE)))
            self.tail = np.ascontiguousarray(q.T)
        else:
            self.tail, _ = np.linalg.qr(rng.standard_normal((self.N_BACKBONE, self.dim)))
        self.tunable = frozenset({"tail"}) if trainable else frozenset()
        self._cache = OrderedDict()

    def backbone(self, image) -> np.ndarray:
        img = as_image(image)
        key = (img.shape, hash(img.tobytes()))
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        rgb = img if img.shape[2] == 3 else np.repeat(img, 3, axis=2)
        lum = rgb.mean(axis=2)
        channels = [rgb[:, :, c] for c in range(3)]
        coarse = ndimage.gaussian_filter(rgb, sigma=(2, 2, 0))
        channels += [coarse[:, :, c] for c in range(3)]
        gy = ndimage.gaussian_filter(lum, 1.0, order=(1, 0))
        gx = ndimage.gaussian_filter(lum, 1.0, order=(0, 1))
        for a in (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4):
            resp = np.cos(a) * gy + np.sin(a) * gx
            channels.append(ndimage.gaussian_filter(resp * resp, 1.0))
        mu = ndimage.gaussian_filter(lum, 1.0)
        channels.append(ndimage.gaussian_filter(lum * lum, 1.0) - mu * mu)
        x = block_mean(np.stack(channels, axis=2), self.stride)
        x = (x - x.mean(axis=(0, 1))) / (x.std(axis=(0, 1)) + 1e-6)
        self._cache[key] = x
        if len(self._cache) > self.CACHE_SIZE:
            self._cache.popitem(last=False)
        return x

    def encode(self, image) -> np.ndarray:
        return self.backbone(image) @ self.tail

    def encode_vjp(self, image):
        x = self.backbone(image)
        feats = x @ self.tail

        def vjp(grad_f):
            if "tail" not in self.tunable:
                return {}
            return {"tail": np.tensordot(x, grad_f, axes=([0, 1], [0, 1]))}

        return feats, vjp

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"tail": self.tail} if "tail" in self.tunable else {}

    def apply_update(self, deltas) -> None:
        if "tail" in deltas and "tail" in self.tunable:
            self.tail = self.tail + deltas["tail"]

    def copy(self) -> "ToyExtractor":
        return copy.deepcopy(self)
