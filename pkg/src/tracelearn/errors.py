"""Exception hierarchy shared across the package."""


class TraceLearnError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TraceLearnError):
    """A raw or trace log line could not be parsed.

    Carries the byte offset at which the line stopped matching the
    expected record shape.
    """

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class ValidationError(TraceLearnError):
    """Input data violated a structural contract (bad code, bad config, ...)."""


class MissingInputError(TraceLearnError):
    """A required input artifact does not exist."""

    def __init__(self, path):
        super().__init__(f"missing required input: {path}")
        self.path = str(path)
