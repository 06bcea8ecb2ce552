"""Exception hierarchy for the simulator.

Everything derives from :class:`MacsError` so callers (the CLI in particular)
can separate validation failures from I/O failures.
"""


class MacsError(ValueError):
    """Base class for invalid inputs and violated preconditions."""


class NonDivisibleError(MacsError):
    pass


class BadKError(MacsError):
    pass


class NonFiniteError(MacsError):
    pass


class EmptyGroupError(MacsError):
    pass


class EmptyBatchError(MacsError):
    pass


class EmptyModalityError(MacsError):
    pass


class LengthMismatchError(MacsError):
    pass


class PlanMismatchError(MacsError):
    pass


class UnresolvedSlotError(MacsError):
    pass


class SpecInvalidError(MacsError):
    pass


class ConfigError(MacsError):
    """Raised by config parsing; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ParseError(ConfigError):
    pass


class UnknownFieldError(ConfigError):
    pass


class RangeError(ConfigError):
    pass
