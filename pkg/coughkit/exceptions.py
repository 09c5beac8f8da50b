"""Exception classes for coughkit."""

from typing import Any, Dict, Optional


class CoughKitError(Exception):
    """Base exception for all coughkit errors."""

    def __init__(self, message: str, **context: Any) -> None:
        """Initialize error.

        Args:
            message: Error message
            **context: Structured details (shapes, paths, line numbers, ...)
        """
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        """String representation of the error."""
        parts = [self.message]
        for key, value in self.context.items():
            preview = str(value)
            if len(preview) > 200:
                preview = preview[:200] + "..."
            parts.append(f"{key}: {preview}")
        return " | ".join(parts)

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form used for CLI error output."""
        return {
            "error": self.__class__.__name__,
            "message": self.message,
            "context": {key: _jsonable(value) for key, value in self.context.items()},
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


class AudioDecodeError(CoughKitError):
    """Raised when an audio container cannot be parsed."""
    pass


class UnsupportedFormatError(AudioDecodeError):
    """Raised when an audio container holds an encoding we do not read."""

    def __init__(self, message: str, encoding: Optional[str] = None, **context: Any) -> None:
        """Initialize unsupported-format error.

        Args:
            message: Error message
            encoding: Name of the rejected encoding
            **context: Additional details
        """
        super().__init__(message, encoding=encoding, **context)
        self.encoding = encoding


class SignalTooShortError(CoughKitError):
    """Raised when a signal is shorter than the analysis requires."""
    pass


class InvalidParameterError(CoughKitError, ValueError):
    """Raised when a parameter violates an operation's precondition."""
    pass


class ShapeMismatchError(CoughKitError, ValueError):
    """Raised when array shapes are incompatible."""

    def __init__(self, message: str, *shapes: Any, **context: Any) -> None:
        """Initialize shape error.

        Args:
            message: Error message
            *shapes: The offending shapes, in operand order
            **context: Additional details
        """
        super().__init__(message, shapes=[tuple(s) for s in shapes], **context)
        self.shapes = [tuple(s) for s in shapes]


class NonFiniteError(CoughKitError, FloatingPointError):
    """Raised in checked mode when an operation produces NaN or Inf."""
    pass


class ManifestError(CoughKitError):
    """Raised when a dataset manifest violates its invariants."""

    def __init__(
        self,
        message: str,
        line_number: Optional[int] = None,
        value: Optional[str] = None,
        **context: Any,
    ) -> None:
        """Initialize manifest error.

        Args:
            message: Error message
            line_number: 1-based line number of the offending row (header is line 1)
            value: The offending value
            **context: Additional details
        """
        super().__init__(message, line_number=line_number, value=value, **context)
        self.line_number = line_number
        self.value = value


class CheckpointError(CoughKitError):
    """Raised when a checkpoint cannot be written, read or applied."""
    pass


class TrainingError(CoughKitError):
    """Raised when a training step or loop cannot proceed."""
    pass


class EvaluationError(CoughKitError, ValueError):
    """Raised when metrics cannot be computed from the given inputs."""
    pass


class FeatureFileError(CoughKitError):
    """Raised when a spectrogram file is malformed."""
    pass
