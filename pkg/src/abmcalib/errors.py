"""Exception types shared across the toolkit."""


class CalibrationError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CalibrationError, ValueError):
    """Array shapes do not line up with the declared configuration."""


class ParameterRangeError(CalibrationError, ValueError):
    """A parameter value lies outside its declared range."""


class NumericsError(CalibrationError, RuntimeError):
    """A numerical routine failed to produce a usable result."""
