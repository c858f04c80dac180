"""Exception hierarchy shared by all kwspot modules."""


class KwspotError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(KwspotError):
    """Malformed file container (bad RIFF header, truncated chunk, ...)."""


class UnsupportedError(KwspotError):
    """Well-formed file in an encoding we refuse (non-PCM, stereo, 8-bit)."""


class DatasetError(KwspotError):
    """Dataset directory layout violation."""


class SplitError(KwspotError):
    """Dataset cannot be split as requested."""


class DspError(KwspotError):
    """Signal-processing precondition violation."""


class ShapeError(KwspotError):
    """Tensor shapes do not conform for an operation."""


class UsageError(KwspotError):
    """API misuse (e.g. backward on a non-scalar)."""


class ConfigError(KwspotError):
    """Invalid configuration value or key."""


class DataError(KwspotError):
    """Invalid data value (label out of range, ...)."""


class CheckpointError(KwspotError):
    """Unreadable or corrupt checkpoint file."""


class IoError(KwspotError):
    """Filesystem failure while writing an artifact."""
