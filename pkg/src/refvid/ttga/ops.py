"""Prototype activation primitives and their vector-Jacobian products.

Feature maps are ``(H, W, D)`` arrays, masks ``(H, W)`` arrays of 0/1, and
prototypes ``(D,)`` vectors.
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateMapError, EmptySupportError, InputError

OTSU_BINS = 256


def masked_average_pool(features, mask) -> np.ndarray:
    """Mean feature over the foreground of ``mask``."""
    f = np.asarray(features, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if f.shape[:2] != m.shape:
        raise InputError(f"mask {m.shape} does not match feature grid {f.shape[:2]}")
    total = m.sum()
    if total <= 0:
        raise EmptySupportError("masked average pooling needs at least one foreground pixel")
    return np.tensordot(m, f, axes=([0, 1], [0, 1])) / total


def similarity_map(features, prototype) -> np.ndarray:
    """Per-pixel cosine similarity to ``prototype``; zero-norm pixels score 0."""
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(prototype, dtype=np.float64)
    pn = np.linalg.norm(p)
    if pn == 0.0 or not np.isfinite(pn):
        raise InputError("prototype must be a finite nonzero vector")
    fn = np.linalg.norm(f, axis=2)
    dots = f @ p
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(fn > 0, dots / (fn * pn), 0.0)
    return np.clip(s, -1.0, 1.0)


def _otsu_bin(hist: np.ndarray) -> int:
    """Index ``k`` maximising between-class variance for the split ``[0..k] | [k+1..]``.

    Scores are compared exactly in integer arithmetic; ties go to the lower bin.
    Returns -1 if no split leaves both classes nonempty.
    """
    hist = hist.astype(np.int64)
    idx = np.arange(hist.size, dtype=np.int64)
    n0 = np.cumsum(hist)[:-1]
    s0 = np.cumsum(hist * idx)[:-1]
    n = int(hist.sum())
    s = int((hist * idx).sum())
    best_k, best_num, best_den = -1, 0, 1
    # between-class variance = (s0*n1 - s1*n0)^2 / (n^2 * n0 * n1)
    for k in range(n0.size):
        a0 = int(n0[k])
        a1 = n - a0
        if a0 == 0 or a1 == 0:
            continue
        b0 = int(s0[k])
        d = b0 * a1 - (s - b0) * a0
        num = d * d
        den = a0 * a1
        if best_k < 0 or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return best_k


def otsu_histogram(values, bins: int = OTSU_BINS):
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DegenerateMapError("similarity map is constant")
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return hist, edges


def otsu_threshold(values, bins: int = OTSU_BINS) -> float:
    """Otsu threshold over a ``bins``-bin histogram spanning the observed range.

    The returned value is the upper edge of the last bin of the lower class.
    Raises :class:`DegenerateMapError` for a constant map.
    """
    hist, edges = otsu_histogram(values, bins)
    k = _otsu_bin(hist)
    if k < 0:
        raise DegenerateMapError("no threshold separates the map into two nonempty classes")
    return float(edges[k + 1])


def binarize(similarity, tau: float) -> np.ndarray:
    if not np.isfinite(tau):
        raise InputError("threshold must be finite")
    return (np.asarray(similarity) > tau).astype(np.uint8)


def otsu_mask(similarity) -> np.ndarray:
    """``binarize(s, otsu_threshold(s))``; raises on degenerate maps."""
    return binarize(similarity, otsu_threshold(similarity))


def bce_loss(similarity, mask, temperature: float = 1.0) -> float:
    """Mean binary cross entropy between ``sigmoid(s / temperature)`` and ``mask``."""
    s = np.asarray(similarity, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if s.shape != m.shape:
        raise InputError(f"similarity {s.shape} and mask {m.shape} differ in shape")
    x = s / temperature
    # -log sigmoid(x) = logaddexp(0, -x); -log(1 - sigmoid(x)) = logaddexp(0, x)
    per_pixel = m * np.logaddexp(0.0, -x) + (1.0 - m) * np.logaddexp(0.0, x)
    return float(per_pixel.mean())


# -- gradients -------------------------------------------------------------

def bce_grad(similarity, mask, temperature: float = 1.0) -> np.ndarray:
    s = np.asarray(similarity, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    prob = 0.5 * (1.0 + np.tanh(0.5 * s / temperature))
    return (prob - m) / (s.size * temperature)


def similarity_vjp(features, prototype, grad_s):
    """Pull ``dL/dS`` back to ``(dL/dF, dL/dp)`` for :func:`similarity_map`.

    Pixels with zero feature norm contribute nothing.  The clip in
    :func:`similarity_map` is treated as the identity.
    """
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(prototype, dtype=np.float64)
    pn = np.linalg.norm(p)
    q = p / pn
    fn = np.linalg.norm(f, axis=2, keepdims=True)
    safe = np.where(fn > 0, fn, 1.0)
    u = np.where(fn > 0, f / safe, 0.0)
    s = (u @ q)[:, :, None]
    g = np.asarray(grad_s, dtype=np.float64)[:, :, None]
    grad_f = np.where(fn > 0, g * (q - s * u) / safe, 0.0)
    grad_p = ((g * (u - s * q)).sum(axis=(0, 1))) / pn
    return grad_f, grad_p


def map_vjp(mask, grad_p) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    return m[:, :, None] * np.asarray(grad_p)[None, None, :] / m.sum()
