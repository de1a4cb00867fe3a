"""Pseudo-video generation and its on-disk cache."""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import PseudoVideoSequence, as_image, read_image, write_image
from ..errors import CacheError, GenerationError, InputError, RefVidError
from .interp import AlphaSchedule, DbstPreset, get_preset, interpolate_adapter, slerp

MANIFEST = "manifest.json"


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels so fresh and cached frames are identical."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def sequence_key(ref, tgt, schedule: AlphaSchedule, preset: DbstPreset, seed: int, backend_id: str = "",
                 prompt: str = "") -> str:
    h = hashlib.sha256()
    for img in (ref, tgt):
        a = np.ascontiguousarray(quantize(as_image(img)))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    meta = {"alphas": list(schedule.values), "preset": preset.to_dict(), "seed": int(seed),
            "backend": backend_id, "prompt": prompt}
    h.update(json.dumps(meta, sort_keys=True).encode())
    return h.hexdigest()[:32]


class SequenceCache:
    """Content-addressed directory of generated sequences.

    Layout: ``<root>/<key>/frame_000.png ... frame_NNN.png`` plus ``manifest.json``
    with the alphas, preset and seed.  Writes go to a temporary directory that
    is renamed into place, so concurrent writers of the same key are safe.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, key: str) -> Path:
        return self.root / key

    def get(self, key: str) -> Optional[PseudoVideoSequence]:
        d = self.path(key)
        if not d.exists():
            return None
        return load_sequence(d)

    def put(self, key: str, seq: PseudoVideoSequence, meta: dict) -> Path:
        final = self.path(key)
        if final.exists():
            return final
        tmp = Path(tempfile.mkdtemp(prefix=f".{key}-", dir=self.root))
        try:
            save_sequence(tmp, seq, meta)
            try:
                os.rename(tmp, final)
            except OSError:
                if not final.exists():
                    raise
        finally:
            if tmp.exists():
                shutil.rmtree(tmp, ignore_errors=True)
        return final


def save_sequence(directory, seq: PseudoVideoSequence, meta: Optional[dict] = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(seq.frames):
        name = f"frame_{i:03d}.png"
        write_image(directory / name, frame)
        names.append(name)
    manifest = dict(meta or {})
    manifest.update({"alphas": list(seq.alphas), "frames": names})
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_sequence(directory) -> PseudoVideoSequence:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
        frames = [read_image(directory / name) for name in manifest["frames"]]
        return PseudoVideoSequence(frames, [float(a) for a in manifest["alphas"]])
    except (OSError, KeyError, ValueError, RefVidError) as exc:
        raise CacheError(f"cached sequence at {directory} is unreadable: {exc}") from exc


def generate_sequence(ref, tgt, schedule: AlphaSchedule, backend, preset="standard", seed: int = 0,
                      cache: Optional[SequenceCache] = None, prompt: str = "") -> PseudoVideoSequence:
    """Build ``[ref, generated..., tgt]`` with one generated frame per schedule value.

    Adapters and latents are fitted once per endpoint; each intermediate frame
    is rendered from the linearly blended adapter and the spherically blended
    latent.  Generated frames are quantised to 8 bits; the endpoints are the
    inputs themselves.
    """
    ref = as_image(ref)
    tgt = as_image(tgt)
    if ref.shape != tgt.shape:
        raise InputError(f"reference {ref.shape} and target {tgt.shape} must share a resolution")
    preset = get_preset(preset)
    if not isinstance(schedule, AlphaSchedule):
        schedule = AlphaSchedule(list(schedule))
    alphas = [0.0] + list(schedule.values) + [1.0]
    if len(schedule) == 0:
        return PseudoVideoSequence([ref, tgt], alphas)

    key = None
    if cache is not None:
        key = sequence_key(ref, tgt, schedule, preset, seed, type(backend).__name__, prompt)
        hit = cache.get(key)
        if hit is not None:
            # endpoints are the caller's arrays, not their 8-bit copies on disk
            return PseudoVideoSequence([ref] + hit.frames[1:-1] + [tgt], hit.alphas)

    backend.prepare(preset, seed=seed, prompt=prompt)
    try:
        d_r = backend.fit_adapter(ref)
        d_t = backend.fit_adapter(tgt)
        z_r = backend.invert(ref)
        z_t = backend.invert(tgt)
    except RefVidError:
        raise
    except Exception as exc:  # backend internals are opaque
        raise GenerationError(0.0, exc) from exc
    frames = [ref]
    for a in schedule:
        try:
            img = backend.denoise(slerp(z_r, z_t, a), interpolate_adapter(d_r, d_t, a))
            frames.append(quantize(as_image(img)))
        except Exception as exc:
            raise GenerationError(a, exc) from exc
    frames.append(tgt)
    seq = PseudoVideoSequence(frames, alphas)
    if cache is not None:
        cache.put(key, seq, {"preset": preset.to_dict(), "seed": int(seed), "key": key})
    return seq
