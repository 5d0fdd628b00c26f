"""Exception hierarchy and error rendering for xdcont."""
import logging
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)


class XdcontException(Exception):
    """Base exception for all xdcont failures."""

    error_code = "XDCONT_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class InvalidArgumentException(XdcontException):
    error_code = "INVALID_ARGUMENT"


class SingularParametersException(XdcontException):
    """Raised when a1*a2 - b1*b2 vanishes and no coexistence state exists."""

    error_code = "SINGULAR_PARAMETERS"


class NoStartException(XdcontException):
    error_code = "NO_START"


class DegeneratePointException(XdcontException):
    """Raised when the bordered system is singular (corank > 1)."""

    error_code = "DEGENERATE_POINT"


class InvalidBracketException(XdcontException):
    error_code = "INVALID_BRACKET"


class SwitchFailureException(XdcontException):
    error_code = "SWITCH_FAILURE"


class DivergenceException(XdcontException):
    error_code = "DIVERGENCE"


class InsufficientDataException(XdcontException):
    error_code = "INSUFFICIENT_DATA"


class ConfigValidationException(XdcontException):
    error_code = "CONFIG_VALIDATION"


def create_error_response(exc: BaseException) -> Dict[str, Any]:
    """Render an exception as a machine-readable error payload."""
    if isinstance(exc, XdcontException):
        code, message, details = exc.error_code, exc.message, exc.details
    else:
        logger.exception("Unhandled error")
        code, message, details = "INTERNAL_ERROR", str(exc) or type(exc).__name__, {}
    return {
        "success": False,
        "error": {"code": code, "message": message, "details": details},
    }
