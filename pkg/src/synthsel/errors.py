"""Exception types shared across the package."""


class SynthselError(Exception):
    """Base class for all package errors."""


class ConfigError(SynthselError):
    """Invalid configuration value or unknown configuration key."""


class DimensionError(SynthselError):
    """Matrix shapes do not chain for the requested operation."""


class ValidationError(SynthselError):
    """Input data violates a documented invariant."""


class NumericError(SynthselError):
    """Non-finite value or numerically impossible request."""


class FormatError(SynthselError):
    """A file does not match its documented layout."""


class IoError(SynthselError):
    """Truncated or unreadable payload."""


class StateError(SynthselError):
    """Operation called on an object in the wrong state."""
