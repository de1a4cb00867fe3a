"""Exception hierarchy.

Every error raised by the package derives from :class:`RefVidError` so callers
(the CLI in particular) can separate domain failures from programming errors.
"""


class RefVidError(Exception):
    """Base class for all package errors."""


class InputError(RefVidError, ValueError):
    """An argument violates an operation's precondition."""


class IncompatibleAdapterError(InputError):
    """Two adapter deltas differ in their tensor names or shapes."""


class EmptySupportError(InputError):
    """A mask that must contain foreground is empty."""


class DegenerateMapError(RefVidError):
    """A similarity map has no spread, so no threshold can split it."""


class GenerationError(RefVidError):
    """The interpolation backend failed for a given interpolation ratio."""

    def __init__(self, alpha, cause):
        super().__init__(f"frame generation failed at alpha={alpha:.4f}: {cause}")
        self.alpha = alpha
        self.cause = cause


class CacheError(RefVidError):
    """A cached sequence on disk is missing files or fails validation."""


class TrackerError(RefVidError):
    """The video tracker backend failed."""


class ManifestError(RefVidError):
    """A dataset manifest is malformed or cannot support the requested sampling."""


class ConfigError(InputError):
    """A run configuration contains an unknown key or invalid value."""


class BackendUnavailable(RefVidError):
    """An optional full-scale backend was requested but its dependency is missing."""


class NonFiniteLossError(RefVidError):
    """Fine-tuning produced a NaN or infinite loss."""
