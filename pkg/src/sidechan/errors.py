"""Exception hierarchy shared across the package."""


class SidechanError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SidechanError, ValueError):
    pass


class SingularSystemError(SidechanError, ArithmeticError):
    pass


class ModelError(SidechanError, ArithmeticError):
    """A model evaluation produced a non-finite or otherwise unusable value."""


class ProfileLookupError(SidechanError, KeyError):
    pass


class ParseError(SidechanError, ValueError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class UnsupportedEvent(ParseError):
    def __init__(self, event, line=None, source=None):
        self.event = event
        super().__init__(f"event {event!r} is not supported by this PMU", line, source)


class MissingEvent(SidechanError, LookupError):
    pass


class NotCountedError(SidechanError, ValueError):
    """The requested counter was never scheduled; the trial is unusable."""


class SegmentationError(SidechanError, ValueError):
    pass


class CalibrationError(SidechanError, RuntimeError):
    def __init__(self, message, sweep=None):
        self.sweep = sweep or []
        super().__init__(message)
