"""Exception hierarchy shared by all rawvid modules."""


class RawvidError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(RawvidError):
    """Invalid or inconsistent configuration (degenerate levels, empty tables, ...)."""


class ShapeError(RawvidError):
    """Array dimensions incompatible with the requested operation."""


class UnsupportedPatternError(RawvidError):
    """CFA pattern other than the supported GBRG layout."""


class DomainError(RawvidError):
    """Input values outside the documented domain of an operation."""


class ParameterError(RawvidError):
    """Invalid numeric parameter (negative sigma, non-positive gain, ...)."""


class CalibrationError(RawvidError):
    """Noise calibration cannot be performed on the given data."""


class SpaceMismatchError(RawvidError):
    """RGB image passed to a color-space conversion with the wrong source tag."""
