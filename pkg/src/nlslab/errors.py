from __future__ import annotations


__all__ = [
    "CoarseGridWarning",
    "ConfigError",
    "DataFormatError",
    "DetectorInapplicableError",
    "GridOverflowError",
    "InvalidParameterError",
    "LabError",
    "OptimizerStallError",
    "SpectralPositivityError",
    "TailTruncationWarning",
    "UnconvergedWarning",
    "BracketError",
]


class LabError(Exception):
    """Base class for every failure the laboratory reports to its callers."""


class InvalidParameterError(LabError, ValueError):
    pass


class BracketError(LabError):
    """Raised when no amplitude pair with opposite shooting verdicts exists."""


class GridOverflowError(LabError):
    pass


class OptimizerStallError(LabError):
    """Raised when the gradient ascent keeps losing ground after step halving."""


class SpectralPositivityError(LabError):
    pass


class DetectorInapplicableError(LabError):
    pass


class DataFormatError(LabError):
    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(LabError):
    def __init__(self, message: str, *, key_path: str | None = None) -> None:
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class TailTruncationWarning(UserWarning):
    """The field has not decayed at the outer boundary."""


class CoarseGridWarning(UserWarning):
    pass


class UnconvergedWarning(UserWarning):
    pass
