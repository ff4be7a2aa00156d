class LatencyError(Exception):
    """Base class for every error raised by the toolkit."""


class ParseError(LatencyError):
    """Input could not be read. Carries the 1-based line number when it is known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(ParseError):
    """A required field is missing or has the wrong type."""


class ValidationError(LatencyError):
    """Input was readable but violates an invariant of the domain types."""


class UndefinedInputError(LatencyError):
    """A metric or statistic is not defined for the given input."""
