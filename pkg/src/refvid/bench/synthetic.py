"""Procedural shape-on-texture benchmark.

Each class is a shape family (a superformula outline), a hue and a stripe
texture.  Instances vary the outline towards a random other family
(``semantic_gap``), jitter the hue, and place the object with a random offset,
scale and rotation (``geometric_gap``).  Backgrounds are smooth, desaturated
noise fields with fine grain.
"""
from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..core import write_image, write_mask

SHAPE_FAMILIES = [
    # m, n1, n2, n3
    (0.0, 1.0, 1.0, 1.0),   # circle
    (4.0, 12.0, 15.0, 15.0),  # rounded square
    (3.0, 4.5, 10.0, 10.0),  # triangle
    (5.0, 2.0, 7.0, 7.0),   # star
    (6.0, 6.0, 8.0, 8.0),   # hexagon
    (2.0, 1.0, 4.0, 4.0),   # lens
    (8.0, 3.0, 6.0, 6.0),   # gear
    (7.0, 10.0, 6.0, 6.0),  # blob
]


@dataclass(frozen=True)
class SuiteSpec:
    n_classes: int = 8
    per_class: int = 6
    resolution: int = 128
    semantic_gap: float = 0.3
    geometric_gap: float = 0.1
    hue_jitter: float = 0.02
    object_radius: float = 0.28
    seed: int = 0
    dataset_id: str = "synthetic"


@dataclass(frozen=True)
class ClassStyle:
    shape: tuple
    hue: float
    stripe_angle: float
    stripe_period: float


def class_styles(n_classes: int, seed: int = 0):
    rng = np.random.default_rng([seed, 7])
    styles = []
    for c in range(n_classes):
        styles.append(ClassStyle(
            shape=SHAPE_FAMILIES[c % len(SHAPE_FAMILIES)],
            hue=(c / n_classes + 0.03) % 1.0,
            stripe_angle=float(rng.uniform(0, np.pi)),
            stripe_period=float(rng.uniform(5.0, 8.0)),
        ))
    return styles


def superformula(theta, m, n1, n2, n3):
    t = m * theta / 4.0
    r = (np.abs(np.cos(t)) ** n2 + np.abs(np.sin(t)) ** n3) ** (-1.0 / n1)
    return r


def outline_radius(theta, shape, other, mix):
    """Radius function blending two shape families, each normalised to a peak of 1."""
    grid = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    a = superformula(theta, *shape) / superformula(grid, *shape).max()
    b = superformula(theta, *other) / superformula(grid, *other).max()
    return (1 - mix) * a + mix * b


def background(rng, size):
    base = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(size / 12, size / 12, 0))
    base = base / (np.abs(base).max() + 1e-9)
    gray = 0.45 + 0.12 * base.mean(axis=2, keepdims=True)
    tint = 0.05 * base
    grain = 0.06 * ndimage.gaussian_filter(rng.standard_normal((size, size, 1)), 0.7)
    return np.clip(gray + tint + grain, 0, 1)


def render_instance(rng, style: ClassStyle, spec: SuiteSpec, center=None, scale=None, angle=None,
                    other_shape=None, mix=None):
    """One image and mask of ``style``; unspecified instance parameters are drawn from ``rng``."""
    size = spec.resolution
    img = background(rng, size)
    g = spec.geometric_gap
    if center is None:
        center = np.array([size / 2, size / 2]) + rng.uniform(-1, 1, 2) * g * size
    if scale is None:
        scale = float(np.exp(rng.uniform(-1, 1) * 1.5 * g))
    if angle is None:
        angle = float(rng.uniform(-1, 1) * np.pi * g)
    if other_shape is None:
        other_shape = SHAPE_FAMILIES[int(rng.integers(len(SHAPE_FAMILIES)))]
    if mix is None:
        mix = float(rng.uniform(0, spec.semantic_gap))
    radius = spec.object_radius * size * scale
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    rho = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx) - angle
    mask = (rho <= radius * outline_radius(theta, style.shape, other_shape, mix)).astype(np.uint8)

    hue = (style.hue + rng.uniform(-1, 1) * spec.hue_jitter) % 1.0
    rgb = np.array(colorsys.hsv_to_rgb(hue, 0.75, 0.85))
    # stripes rotate with the object
    ang = style.stripe_angle + angle
    coord = (dy * np.cos(ang) + dx * np.sin(ang)) / scale
    stripes = 0.12 * np.sin(2 * np.pi * coord / style.stripe_period + rng.uniform(0, 2 * np.pi))
    grain = 0.04 * ndimage.gaussian_filter(rng.standard_normal((size, size)), 0.7)
    fg = np.clip(rgb[None, None, :] * (1 + stripes[:, :, None]) + grain[:, :, None], 0, 1)
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 0.6)[:, :, None]
    img = np.clip(soft * fg + (1 - soft) * img, 0, 1)
    return img, mask


def write_suite(root, spec: SuiteSpec = SuiteSpec()) -> Path:
    """Render the suite as PNGs under ``root`` and return the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    styles = class_styles(spec.n_classes, spec.seed)
    entries = []
    for c, style in enumerate(styles):
        for k in range(spec.per_class):
            rng = np.random.default_rng([spec.seed, c, k])
            img, mask = render_instance(rng, style, spec)
            name = f"c{c:02d}_{k:03d}.png"
            write_image(root / "images" / name, img)
            write_mask(root / "masks" / name, mask)
            entries.append({"image": f"images/{name}", "mask": f"masks/{name}", "class": f"class{c:02d}"})
    manifest = {
        "dataset_id": spec.dataset_id,
        "resolution": [spec.resolution, spec.resolution],
        "entries": entries,
        "generator": asdict(spec),
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
