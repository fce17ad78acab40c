"""Exception types shared across the package."""


class PanomatchError(Exception):
    """Base class for all package-specific errors."""


class DegenerateTarget(PanomatchError):
    """Target coincides with the camera axis; bearing is undefined."""


class AboveHorizon(PanomatchError):
    """Pixel row at or above the horizon; the viewing ray never hits the ground."""


class DegenerateBearings(PanomatchError):
    """Bearing spread too small for a stable ray intersection."""


class InsufficientData(PanomatchError):
    """Not enough samples to fit the requested model."""


class ParseError(PanomatchError):
    """Malformed input file; the message carries the offending location."""


class IntegrityError(PanomatchError):
    """Referential integrity violation inside a loaded dataset."""


class MissingProperty(ParseError):
    """A required GeoJSON feature property is absent."""

    def __init__(self, prop: str, feature_index: int):
        super().__init__(f"feature {feature_index}: missing required property {prop!r}")
        self.prop = prop
        self.feature_index = feature_index


class FeatureDimMismatch(PanomatchError):
    """Appearance feature vectors of unequal length were mixed."""


class LengthMismatch(PanomatchError, ValueError):
    """Paired sequences have different lengths."""


class IndexOutOfRange(PanomatchError, IndexError):
    """Class index outside the logit vector."""


class EmptyInput(PanomatchError, ValueError):
    """An aggregate was requested over zero elements."""


class ConfigError(PanomatchError, ValueError):
    """Invalid configuration value."""
