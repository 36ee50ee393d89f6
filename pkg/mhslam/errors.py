from __future__ import annotations


class MhslamError(Exception):
    """Base class for every error raised by mhslam."""


class InvalidInputError(MhslamError, ValueError):
    pass


class MissingVariableError(MhslamError, KeyError):
    def __init__(self, key: object) -> None:
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"variable {self.key} has no value"


class GaugeError(MhslamError):
    pass


class ValidationError(MhslamError, ValueError):
    pass


class DatasetParseError(MhslamError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


__all__ = [
    "DatasetParseError",
    "GaugeError",
    "InvalidInputError",
    "MhslamError",
    "MissingVariableError",
    "ValidationError",
]
