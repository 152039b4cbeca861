"""Exception hierarchy shared across the package."""


class StructPromptError(Exception):
    """Base class for every error raised by structprompt."""


class InvalidArgumentError(StructPromptError, ValueError):
    pass


class ConfigError(StructPromptError):
    pass


class LoadError(StructPromptError):
    pass


class SplitError(StructPromptError):
    pass


class ParseError(StructPromptError):
    """The LM completion could not be parsed (e.g. it was empty)."""


class QuarantineError(StructPromptError):
    """An optimizer was handed the held-out test split."""


class BackendError(StructPromptError):
    """Non-retryable HTTP failure."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class UnavailableError(StructPromptError):
    """Retry budget exhausted on transient failures."""


class ProtocolError(StructPromptError):
    """The backend answered with a payload we cannot interpret."""
