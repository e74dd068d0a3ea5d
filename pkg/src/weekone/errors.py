"""Exception types shared across the toolkit."""


class ParseError(ValueError):
    """A malformed row in an activity log; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SchemaError(ValueError):
    """Input references something the course spec does not define."""


class ConfigError(ValueError):
    """A configuration value violates an operation's preconditions."""


class TrainingError(ValueError):
    """Training input is unusable (e.g. a single-class matrix)."""
