"""Test-time prototype refinement.

Both objectives sum two BCE terms per step.  The augmentation term scores
the augmented reference against its transformed ground-truth mask using the
prototype of the original reference.  The cyclic term scores the original
reference against its own mask using a prototype pooled from the augmented
view.  The two strategies differ only in the mask that prototype is pooled
under: ``acc`` uses the Otsu pseudo-label, ``abc`` the transformed
ground-truth mask.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..core import Episode, resize_mask
from ..errors import DegenerateMapError, InputError, NonFiniteLossError
from .augment import DEFAULT_RANGES, AffineRanges, augment
from .ops import (bce_grad, bce_loss, map_vjp, masked_average_pool, otsu_mask, similarity_map,
                  similarity_vjp)

log = logging.getLogger(__name__)

STRATEGIES = ("acc", "abc")


@dataclass
class TTGAConfig:
    steps: int = 100
    lr: float = 1e-3
    temperature: float = 1.0
    aug_strength: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    ranges: AffineRanges = DEFAULT_RANGES

    def __post_init__(self):
        if self.steps < 0:
            raise InputError("steps must be non-negative")
        if self.lr < 0:
            raise InputError("learning rate must be non-negative")
        if self.temperature <= 0:
            raise InputError("temperature must be positive")


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * step / total)) if total > 0 else base


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def deltas(self, grads: Dict[str, np.ndarray], lr: float) -> Dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            out[k] = -lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


@dataclass
class StepRecord:
    step: int
    loss_aug: float
    loss_cyc: Optional[float]
    loss: float
    pseudo_fg_fraction: float
    lr: float
    reference: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class FinetuneResult:
    extractor: object
    prototype: np.ndarray
    history: List[StepRecord] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    def __iter__(self):
        yield self.extractor
        yield self.prototype

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.history:
                fh.write(rec.to_json() + "\n")


def _feature_mask(mask, feats):
    return resize_mask(mask, feats.shape[:2])


def consistency_loss(extractor, ref_image, ref_mask, aug_image, aug_mask, strategy: str,
                     temperature: float = 1.0, with_grad: bool = True):
    """One evaluation of ``L_aug + L_cyc``.

    Returns ``(loss_aug, loss_cyc_or_None, pseudo_fg_fraction, grads)``; the
    cyclic term is skipped when the pooling mask is empty.
    """
    if strategy not in STRATEGIES:
        raise InputError(f"unknown strategy {strategy!r}")
    f_r, vjp_r = extractor.encode_vjp(ref_image)
    f_a, vjp_a = extractor.encode_vjp(aug_image)
    m_r = _feature_mask(ref_mask, f_r)
    m_a = _feature_mask(aug_mask, f_a)
    if not m_r.any():
        m_r = _feature_mask_any(ref_mask, f_r)

    p_r = masked_average_pool(f_r, m_r)
    s_a = similarity_map(f_a, p_r)
    loss_aug = bce_loss(s_a, m_a, temperature)

    if strategy == "acc":
        try:
            pool_mask = otsu_mask(s_a)
        except DegenerateMapError:
            pool_mask = np.zeros_like(m_a)
    else:
        pool_mask = m_a
    pseudo_fg = float(pool_mask.mean())

    loss_cyc = None
    p_hat = None
    s_r = None
    if pool_mask.any():
        p_hat = masked_average_pool(f_a, pool_mask)
        if np.linalg.norm(p_hat) > 0:
            s_r = similarity_map(f_r, p_hat)
            loss_cyc = bce_loss(s_r, m_r, temperature)

    if not with_grad:
        return loss_aug, loss_cyc, pseudo_fg, {}

    g_fa, g_pr = similarity_vjp(f_a, p_r, bce_grad(s_a, m_a, temperature))
    g_fr = map_vjp(m_r, g_pr)
    if loss_cyc is not None:
        g_fr2, g_phat = similarity_vjp(f_r, p_hat, bce_grad(s_r, m_r, temperature))
        g_fr = g_fr + g_fr2
        # the pseudo-label is a hard threshold, so no gradient flows through it
        g_fa = g_fa + map_vjp(pool_mask, g_phat)
    grads = {}
    for part in (vjp_r(g_fr), vjp_a(g_fa)):
        for k, v in part.items():
            grads[k] = grads[k] + v if k in grads else v
    return loss_aug, loss_cyc, pseudo_fg, grads


def _feature_mask_any(mask, feats):
    # a tiny object can vanish under nearest sampling; fall back to any-overlap pooling
    stride_h = mask.shape[0] // feats.shape[0]
    stride_w = mask.shape[1] // feats.shape[1]
    h, w = feats.shape[:2]
    m = np.asarray(mask, dtype=np.float64)[: h * stride_h, : w * stride_w]
    return (m.reshape(h, stride_h, w, stride_w).max(axis=(1, 3)) > 0).astype(np.uint8)


def reference_prototypes(extractor, references) -> List[np.ndarray]:
    protos = []
    for img, mask in references:
        f = extractor.encode(img)
        m = _feature_mask(mask, f)
        if not m.any():
            m = _feature_mask_any(mask, f)
        protos.append(masked_average_pool(f, m))
    return protos


def class_prototype(extractor, references) -> np.ndarray:
    """Mean of the per-reference prototypes."""
    return np.mean(reference_prototypes(extractor, references), axis=0)


def medoid_reference(extractor, references) -> int:
    """Index of the reference whose prototype is most cosine-similar to the others."""
    protos = reference_prototypes(extractor, references)
    if len(protos) == 1:
        return 0
    p = np.stack(protos)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    sim = p @ p.T
    np.fill_diagonal(sim, 0.0)
    return int(np.argmax(sim.sum(axis=1)))


def finetune(episode: Episode, extractor, cfg: TTGAConfig = TTGAConfig(), strategy: str = "acc") -> FinetuneResult:
    """Adapt a copy of ``extractor`` on the episode's references.

    K-shot episodes cycle through the references round-robin within the step
    budget.  The returned prototype is recomputed once after the last step.
    ``initial_loss`` and ``final_loss`` evaluate the objective on the first
    step's augmentation before and after adaptation.
    """
    if strategy not in STRATEGIES:
        raise InputError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    ex = extractor.copy()
    refs = episode.references
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    history: List[StepRecord] = []

    probe = augment(refs[0][0], refs[0][1], rng, strength=cfg.aug_strength, ranges=cfg.ranges)
    la, lc, _, _ = consistency_loss(ex, refs[0][0], refs[0][1], probe.image, probe.mask, strategy,
                                    cfg.temperature, with_grad=False)
    initial = la + (lc or 0.0)

    for step in range(cfg.steps):
        j = step % len(refs)
        img, mask = refs[j]
        pair = probe if step == 0 else augment(img, mask, rng, strength=cfg.aug_strength, ranges=cfg.ranges)
        la, lc, fg, grads = consistency_loss(ex, img, mask, pair.image, pair.mask, strategy, cfg.temperature)
        total = la + (lc or 0.0)
        if not np.isfinite(total):
            raise NonFiniteLossError(f"non-finite loss at step {step}: aug={la}, cyc={lc}")
        if lc is None:
            log.debug("step %d: empty pooling mask, cyclic term skipped", step)
        lr = cosine_lr(cfg.lr, step, cfg.steps)
        history.append(StepRecord(step, la, lc, total, fg, lr, j))
        if grads:
            ex.apply_update(opt.deltas(grads, lr))

    la, lc, _, _ = consistency_loss(ex, refs[0][0], refs[0][1], probe.image, probe.mask, strategy,
                                    cfg.temperature, with_grad=False)
    final = la + (lc or 0.0)
    return FinetuneResult(ex, class_prototype(ex, refs), history, initial, final)


def finetune_acc(episode, extractor, cfg: TTGAConfig = TTGAConfig()) -> FinetuneResult:
    return finetune(episode, extractor, cfg, "acc")


def finetune_abc(episode, extractor, cfg: TTGAConfig = TTGAConfig()) -> FinetuneResult:
    return finetune(episode, extractor, cfg, "abc")
