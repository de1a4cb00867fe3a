"""Frame-generation backends.

A backend turns an image into an adapter delta (``fit_adapter``) and a latent
(``invert``), and renders an image from a latent under an adapter
(``denoise``).  :class:`SyntheticMorphBackend` does this in closed form so that
the whole pipeline runs without model weights.
"""
from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from ..core import as_image
from ..errors import InputError
from .interp import PRESETS, AdapterDelta, DbstPreset, LatentNoise


@runtime_checkable
class InterpolationBackend(Protocol):
    def prepare(self, preset: DbstPreset, seed: int = 0, prompt: str = "") -> None: ...

    def fit_adapter(self, image) -> AdapterDelta: ...

    def invert(self, image) -> LatentNoise: ...

    def denoise(self, latent: LatentNoise, delta: AdapterDelta) -> np.ndarray: ...


class SyntheticMorphBackend:
    """Closed-form morph: aligned cross-dissolve plus a similarity warp.

    Each image is summarised by a pose (salient-region centroid and log scale)
    and its content resampled into a pose-normalised canvas.  The adapter holds
    the pose and a low-rank, low-pass approximation of the canvas; the latent
    holds the remaining canvas detail together with the image-space resampling
    residual.  Rendering warps ``appearance + detail`` back to the pose and adds
    the residual, so ``denoise(invert(x), fit_adapter(x)) == x`` up to float
    rounding.  Blending two adapters moves the pose linearly and dissolves the
    aligned appearances; blending two latents mixes aligned detail.
    """

    def __init__(self, canvas_factor: int = 2, blur_sigma: float = 3.0, reference_extent: float = 0.5,
                 preset: DbstPreset = PRESETS["fast"]):
        if canvas_factor < 1:
            raise InputError("canvas_factor must be >= 1")
        self.canvas_factor = int(canvas_factor)
        self.blur_sigma = float(blur_sigma)
        self.reference_extent = float(reference_extent)
        self.preset = preset
        self.seed = 0
        self.prompt = ""
        self.fitted = 0  # number of adapters fitted by this instance

    def prepare(self, preset: DbstPreset, seed: int = 0, prompt: str = "") -> None:
        self.preset = preset
        self.seed = int(seed)
        self.prompt = prompt

    # -- geometry ---------------------------------------------------------

    def estimate_pose(self, image) -> np.ndarray:
        """``(cy, cx, log_scale)`` of the region that stands out from the border colour."""
        from ..ttga.ops import otsu_threshold
        from ..errors import DegenerateMapError

        img = as_image(image)
        h, w = img.shape[:2]
        border = np.concatenate([img[:2].reshape(-1, img.shape[2]), img[-2:].reshape(-1, img.shape[2]),
                                 img[:, :2].reshape(-1, img.shape[2]), img[:, -2:].reshape(-1, img.shape[2])])
        bg = np.median(border, axis=0)
        smooth = ndimage.gaussian_filter(img, sigma=(1.5, 1.5, 0))
        dist = np.linalg.norm(smooth - bg, axis=2)
        try:
            tau = otsu_threshold(dist)
        except DegenerateMapError:
            return np.array([(h - 1) / 2.0, (w - 1) / 2.0, 0.0])
        fg = dist > tau
        n = np.count_nonzero(fg)
        if n < 4:
            return np.array([(h - 1) / 2.0, (w - 1) / 2.0, 0.0])
        ys, xs = np.nonzero(fg)
        scale = np.sqrt(n) / (self.reference_extent * np.sqrt(h * w))
        return np.array([ys.mean(), xs.mean(), np.log(scale)])

    def _canvas_shape(self, img_shape):
        k = self.canvas_factor
        return (k * img_shape[0], k * img_shape[1])

    def _to_canvas(self, img: np.ndarray, pose: np.ndarray) -> np.ndarray:
        ch, cw = self._canvas_shape(img.shape)
        s = np.exp(pose[2])
        uy, ux = np.mgrid[0:ch, 0:cw].astype(np.float64)
        y = pose[0] + s * (uy - (ch - 1) / 2.0)
        x = pose[1] + s * (ux - (cw - 1) / 2.0)
        return np.stack([ndimage.map_coordinates(img[:, :, c], [y, x], order=1, mode="nearest")
                         for c in range(img.shape[2])], axis=2)

    def _from_canvas(self, canvas: np.ndarray, pose: np.ndarray, img_shape) -> np.ndarray:
        h, w = img_shape[:2]
        ch, cw = canvas.shape[:2]
        s = np.exp(pose[2])
        y, x = np.mgrid[0:h, 0:w].astype(np.float64)
        uy = (y - pose[0]) / s + (ch - 1) / 2.0
        ux = (x - pose[1]) / s + (cw - 1) / 2.0
        return np.stack([ndimage.map_coordinates(canvas[:, :, c], [uy, ux], order=1, mode="nearest")
                         for c in range(canvas.shape[2])], axis=2)

    # -- appearance -------------------------------------------------------

    def _low_pass(self, canvas: np.ndarray) -> np.ndarray:
        # heat diffusion split into inversion_steps equal increments
        steps = self.preset.inversion_steps
        sigma = self.blur_sigma / np.sqrt(steps)
        out = canvas
        for _ in range(steps):
            out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0), mode="nearest")
        return out

    def _low_rank(self, canvas: np.ndarray) -> np.ndarray:
        """Rank-limited approximation per channel by subspace iteration."""
        rank = min(self.preset.lora_rank, *canvas.shape[:2])
        rng = np.random.default_rng(self.seed)
        out = np.empty_like(canvas)
        for c in range(canvas.shape[2]):
            a = canvas[:, :, c]
            q, _ = np.linalg.qr(a @ rng.standard_normal((a.shape[1], rank)))
            for _ in range(self.preset.lora_steps):
                q_new, _ = np.linalg.qr(a @ (a.T @ q))
                done = np.linalg.norm(q_new @ (q_new.T @ q) - q) < 1e-10
                q = q_new
                if done:
                    break
            out[:, :, c] = q @ (q.T @ a)
        return out

    # -- backend contract -------------------------------------------------

    def _decompose(self, image):
        img = as_image(image)
        pose = self.estimate_pose(img)
        canvas = self._to_canvas(img, pose)
        appearance = self._low_rank(self._low_pass(canvas))
        return img, pose, canvas, appearance

    def fit_adapter(self, image) -> AdapterDelta:
        _, pose, _, appearance = self._decompose(image)
        self.fitted += 1
        return AdapterDelta({"pose": pose, "appearance": appearance}, rank=self.preset.lora_rank)

    def invert(self, image) -> LatentNoise:
        img, pose, canvas, appearance = self._decompose(image)
        residual = img - self._from_canvas(canvas, pose, img.shape)
        z = np.concatenate([(canvas - appearance).ravel(), residual.ravel()])
        return LatentNoise(z, timestep_count=self.preset.inversion_steps)

    def denoise(self, latent: LatentNoise, delta: AdapterDelta) -> np.ndarray:
        appearance = delta.tensors["appearance"]
        pose = delta.tensors["pose"]
        ch, cw, c = appearance.shape
        k = self.canvas_factor
        if ch % k or cw % k:
            raise InputError("adapter canvas does not match this backend's canvas factor")
        img_shape = (ch // k, cw // k, c)
        n_canvas = appearance.size
        z = latent.z
        if z.size != n_canvas + int(np.prod(img_shape)):
            raise InputError("latent size does not match the adapter canvas")
        detail = z[:n_canvas].reshape(appearance.shape)
        residual = z[n_canvas:].reshape(img_shape)
        out = self._from_canvas(appearance + detail, pose, img_shape) + residual
        return np.clip(out, 0.0, 1.0)
