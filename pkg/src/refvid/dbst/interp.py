"""Interpolation primitives for the two quantities that drive frame generation.

Adapter deltas are blended linearly, inverted latent noise spherically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..errors import IncompatibleAdapterError, InputError

# Below this angle (radians) the spherical blend is numerically unstable and
# coincides with the linear one to first order.
SLERP_ANGLE_TOL = 1e-4


@dataclass
class AdapterDelta:
    """Named low-rank residual tensors fitted to one image."""

    tensors: Dict[str, np.ndarray]
    rank: int = 1

    def __post_init__(self):
        if self.rank < 1:
            raise InputError("adapter rank must be positive")
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t)):
                raise InputError(f"adapter tensor {name!r} has non-finite entries")

    def signature(self):
        return {k: np.shape(v) for k, v in self.tensors.items()}


@dataclass
class LatentNoise:
    z: np.ndarray
    timestep_count: int = 20

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.timestep_count < 1:
            raise InputError("timestep_count must be positive")
        if not np.all(np.isfinite(self.z)):
            raise InputError("latent noise has non-finite entries")


@dataclass
class AlphaSchedule:
    values: list = field(default_factory=list)

    def __post_init__(self):
        self.values = [float(v) for v in self.values]
        if any(not 0.0 < v < 1.0 for v in self.values):
            raise InputError("schedule values must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise InputError("schedule values must be strictly increasing")

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class DbstPreset:
    name: str
    lora_steps: int
    lora_rank: int
    inversion_steps: int
    denoise_steps: Optional[int] = None
    refinement_enabled: bool = False
    learning_rate: float = 2e-4

    def __post_init__(self):
        for k in ("lora_steps", "lora_rank", "inversion_steps"):
            if getattr(self, k) < 1:
                raise InputError(f"preset {k} must be positive")
        if self.refinement_enabled:
            raise InputError("refinement modules are not supported")

    @property
    def n_denoise_steps(self) -> int:
        return self.denoise_steps or self.inversion_steps

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lora_steps": self.lora_steps,
            "lora_rank": self.lora_rank,
            "inversion_steps": self.inversion_steps,
            "denoise_steps": self.n_denoise_steps,
            "refinement_enabled": self.refinement_enabled,
            "learning_rate": self.learning_rate,
        }


PRESETS = {
    "fast": DbstPreset("fast", lora_steps=50, lora_rank=4, inversion_steps=10),
    "standard": DbstPreset("standard", lora_steps=200, lora_rank=16, inversion_steps=20),
    "full": DbstPreset("full", lora_steps=200, lora_rank=16, inversion_steps=50),
}


def get_preset(name) -> DbstPreset:
    if isinstance(name, DbstPreset):
        return name
    try:
        return PRESETS[name]
    except KeyError:
        raise InputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def interpolate_adapter(dr: AdapterDelta, dt: AdapterDelta, alpha: float) -> AdapterDelta:
    """Elementwise ``(1 - alpha) * dr + alpha * dt`` over every named tensor."""
    alpha = _check_alpha(alpha)
    if dr.signature() != dt.signature():
        raise IncompatibleAdapterError(
            f"adapter layouts differ: {sorted(dr.signature())} vs {sorted(dt.signature())}"
        )
    out = {
        name: (1.0 - alpha) * np.asarray(t, dtype=np.float64) + alpha * np.asarray(dt.tensors[name], dtype=np.float64)
        for name, t in dr.tensors.items()
    }
    return AdapterDelta(out, rank=dr.rank)


def slerp(zr: LatentNoise, zt: LatentNoise, alpha: float) -> LatentNoise:
    """Spherical interpolation between two latents along their great circle.

    Falls back to linear interpolation when the angle between the flattened
    latents is below ``SLERP_ANGLE_TOL``.
    """
    alpha = _check_alpha(alpha)
    a = zr.z
    b = zt.z
    if a.shape != b.shape:
        raise InputError(f"latent shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InputError("cannot interpolate a zero latent")
    cos_phi = np.clip(np.vdot(a, b) / (na * nb), -1.0, 1.0)
    phi = float(np.arccos(cos_phi))
    if phi < SLERP_ANGLE_TOL:
        z = (1.0 - alpha) * a + alpha * b
    elif np.pi - phi < SLERP_ANGLE_TOL:
        raise InputError("latents are antipodal; the interpolation path is not unique")
    else:
        s = np.sin(phi)
        z = (np.sin((1.0 - alpha) * phi) / s) * a + (np.sin(alpha * phi) / s) * b
    return LatentNoise(z, timestep_count=zr.timestep_count)


def make_alpha_schedule(n: int, lo: float = 0.2, hi: float = 0.8) -> AlphaSchedule:
    """``n`` evenly spaced ratios from ``lo`` to ``hi`` inclusive."""
    if int(n) != n or n < 1:
        raise InputError(f"schedule length must be a positive integer, got {n}")
    if not (0.0 < lo <= hi < 1.0):
        raise InputError(f"need 0 < lo <= hi < 1, got lo={lo}, hi={hi}")
    if n > 1 and lo == hi:
        raise InputError("lo == hi only admits a single-frame schedule")
    return AlphaSchedule(np.linspace(lo, hi, int(n)).tolist())
