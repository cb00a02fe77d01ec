"""Exception types shared across the toolkit."""


class CoughCamError(Exception):
    """Base class for all toolkit errors."""


class WavParseError(CoughCamError, ValueError):
    """Malformed RIFF/WAVE container."""


class UnsupportedFormatError(CoughCamError, ValueError):
    """Well-formed WAV whose codec or sample width is not handled."""


class ShapeError(CoughCamError, ValueError):
    pass


class SpecError(CoughCamError, ValueError):
    """Unknown feature-spec token or combination."""


class ConfigError(CoughCamError, ValueError):
    pass


class DegenerateStatsError(CoughCamError, ValueError):
    """Normalization statistics with a non-positive standard deviation."""


class CorruptWeightsError(CoughCamError, ValueError):
    """Weight blob failed checksum, size, or shape validation."""
