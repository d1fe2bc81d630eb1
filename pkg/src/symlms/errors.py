"""Exception types shared across the package."""


class SymLMSError(Exception):
    """Base class for all package errors."""


class IllConditioned(SymLMSError):
    """A linear solve during inversion exceeded the condition-number threshold."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class RepeatedRoot(SymLMSError):
    """Root sensitivity requested at (near) coincident parameters."""


class Diverged(SymLMSError):
    """An adaptive filter state became non-finite or exceeded the magnitude guard."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(SymLMSError):
    """Invalid experiment configuration."""
