"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised for invalid configuration: bad ids, shape mismatches, bad ranges."""


class NumericalError(FloatingPointError):
    """Raised when a NaN/Inf shows up in a loss, gradient or action."""
