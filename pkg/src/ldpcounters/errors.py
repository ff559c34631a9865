"""Exception types raised across the package."""


class ParameterError(ValueError):
    """A configuration or privacy parameter violates its invariant."""


class DomainError(ValueError):
    """An input value lies outside the mechanism's domain."""


class StateFormatError(ValueError):
    """A serialized client state could not be decoded."""


class CorruptStateError(StateFormatError):
    pass


class StateVersionError(StateFormatError):
    pass


class TraceFormatError(ValueError):
    """A trace file row could not be parsed.

    Attributes:
        line: 1-based line number of the offending row, or None when the
            problem concerns the file as a whole.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
