"""Utilities package for xdcont."""

from .error_handlers import (
    ConfigValidationException,
    DegeneratePointException,
    DivergenceException,
    InsufficientDataException,
    InvalidArgumentException,
    InvalidBracketException,
    NoStartException,
    SingularParametersException,
    SwitchFailureException,
    XdcontException,
    create_error_response,
)
from .logging import configure_logging

__all__ = [
    "XdcontException",
    "InvalidArgumentException",
    "SingularParametersException",
    "NoStartException",
    "DegeneratePointException",
    "InvalidBracketException",
    "SwitchFailureException",
    "DivergenceException",
    "InsufficientDataException",
    "ConfigValidationException",
    "create_error_response",
    "configure_logging",
]
