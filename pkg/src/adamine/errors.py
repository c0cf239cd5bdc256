"""Exception hierarchy shared across the package."""


class AdamineError(Exception):
    """Base class for all package errors."""


class ArchiveError(AdamineError):
    """The archive root cannot be read."""


class GapInData(AdamineError):
    """A requested span crosses a recording gap."""

    def __init__(self, channel_id, gap_start, gap_seconds):
        self.channel_id = channel_id
        self.gap_start = gap_start
        self.gap_seconds = gap_seconds
        super().__init__(
            f"gap of {gap_seconds:g} s in channel {channel_id!r} at t={gap_start:g} s"
        )


class DecodeError(AdamineError):
    """Audio payload is corrupt or truncated."""


class EmptySpectrogram(AdamineError):
    """Sample block is shorter than one analysis window."""


class InsufficientPulses(AdamineError):
    """Fewer pulses than needed to score a train."""


class ValidationError(AdamineError, ValueError):
    """Input records violate a schema invariant."""


class FormatError(AdamineError):
    """A persisted file does not match its declared format."""


class TrainingError(AdamineError):
    """Model training diverged."""


class PlanError(AdamineError):
    """A job cannot be decomposed into tasks."""


class ConsistencyError(AdamineError):
    """Internal bookkeeping disagrees with the plan."""


class ConfigError(AdamineError, ValueError):
    """Malformed or unknown configuration entries."""
