"""Exception types shared across the package."""


class DegenerateLaneError(ValueError):
    """A ground-truth lane is too short to supervise (spans < 2 grid rows)."""


class AnnotationFormatError(ValueError):
    """An annotation file does not follow the documented grammar."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or inconsistent."""
