from .tracker import MockTracker, Tracker, TrackerSession, TrackResult, propagate

TRACKERS = ("mock", "sam2-tiny", "deva")


def make_tracker(key: str = "mock", **kwargs):
    """Instantiate a tracker by configuration key."""
    if key == "mock":
        return MockTracker(**kwargs)
    if key == "sam2-tiny":
        from .sam2 import Sam2Tracker

        return Sam2Tracker(**kwargs)
    if key == "deva":
        from .deva import DevaTracker

        return DevaTracker(**kwargs)
    from ..errors import ConfigError

    raise ConfigError(f"unknown tracker {key!r}; choose from {TRACKERS}")


__all__ = ["MockTracker", "Tracker", "TrackerSession", "TrackResult", "propagate", "make_tracker", "TRACKERS"]
