"""Exception hierarchy for dpgrad-lab."""

from typing import Optional


class DPGradError(Exception):
    """Base class for all errors raised by dpgrad-lab."""


class InvalidInputError(DPGradError, ValueError):
    """Input data is non-finite or otherwise unusable."""


class InvalidParameterError(DPGradError, ValueError):
    """A parameter lies outside its admissible range."""


class LayoutError(DPGradError, ValueError):
    """Two gradient layouts that must agree do not."""


class DomainError(DPGradError, ValueError):
    """An argument lies outside the domain where a formula is stated."""


class CorruptMessageError(DPGradError, ValueError):
    """A compressed message is inconsistent with the layout it targets."""


class NumericError(DPGradError, ArithmeticError):
    """Non-finite activations or loss during a forward/backward pass."""

    def __init__(self, message: str, sample_index: Optional[int] = None):
        super().__init__(message)
        self.sample_index = sample_index


class ConfigError(DPGradError, ValueError):
    """Experiment configuration is missing, malformed or inconsistent."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class UsageError(DPGradError):
    """Command-line usage error."""
