from .backends import InterpolationBackend, SyntheticMorphBackend
from .interp import (PRESETS, SLERP_ANGLE_TOL, AdapterDelta, AlphaSchedule, DbstPreset, LatentNoise, get_preset,
                     interpolate_adapter, make_alpha_schedule, slerp)
from .sequence import SequenceCache, generate_sequence, load_sequence, save_sequence

__all__ = [
    "InterpolationBackend", "SyntheticMorphBackend",
    "PRESETS", "SLERP_ANGLE_TOL", "AdapterDelta", "AlphaSchedule", "DbstPreset", "LatentNoise", "get_preset",
    "interpolate_adapter", "make_alpha_schedule", "slerp",
    "SequenceCache", "generate_sequence", "load_sequence", "save_sequence",
]
