"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its admissible range."""


class StructuralError(ValueError):
    """A graph does not have the structure an operation needs."""


class FormatError(ValueError):
    """A file could not be parsed."""


class ConfigError(ValueError):
    """A configuration is invalid or inconsistent with the data."""


class StateError(RuntimeError):
    """An operation was called on an object in the wrong state."""
