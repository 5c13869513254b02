"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration.

    ``param`` names the offending parameter when one can be singled out.
    """

    def __init__(self, message, param=None):
        super().__init__(message)
        self.param = param


class InvariantViolation(RuntimeError):
    """An internal invariant of the event loop was broken (always a bug)."""


class UnsupportedInstance(ValueError):
    """The exact solver was asked for an instance outside its supported range."""
