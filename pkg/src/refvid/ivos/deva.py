"""Placeholder for the DEVA tracker key."""
from __future__ import annotations

from ..errors import BackendUnavailable
from .tracker import TrackerSession, TrackResult


class DevaTracker:
    """Reserved configuration key; no DEVA integration ships with this package."""

    def __init__(self, **kwargs):
        # TODO: wrap DEVA's InferenceCore once a pinned release with mask-prompt input is chosen
        raise BackendUnavailable("the deva tracker is not bundled; use 'mock' or 'sam2-tiny'")

    def propagate(self, session: TrackerSession) -> TrackResult:  # pragma: no cover
        raise BackendUnavailable("the deva tracker is not bundled")
