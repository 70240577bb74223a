"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An input violates a documented precondition on its value."""


class PreconditionError(RuntimeError):
    """A numerical precondition (typically a CFL bound) is violated."""


class UnsupportedSize(ValueError):
    """The problem exceeds the size an exact small-instance routine supports."""


class OutOfBounds(ValueError):
    """Geometry falls outside a declared grid."""


class ConfigError(ValueError):
    """An experiment configuration is missing, malformed or inconsistent."""
