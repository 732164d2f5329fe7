"""
Linear Response Certifier - Custom Exception Hierarchy

Every failure a certified run can hit is typed, so the pipeline can decide
whether to stop, report a partial audit log, or map it to an exit code.

Exception Hierarchy:
    CertificationError
    ├── RigorError
    │   └── DomainError
    ├── DynamicsError
    │   ├── NotExpanding
    │   └── NoConvergence
    ├── CertificateError
    │   ├── ContractionNotCertified
    │   └── NoContraction
    └── ConfigurationError
        └── ParseError
"""

from typing import Optional, Dict, Any
from datetime import datetime, timezone


class CertificationError(Exception):
    """
    Base exception for all certifier errors.

    Attributes:
        message: Human-readable error description
        error_code: Unique error identifier for logging
        details: Additional context about the error
        timestamp: When the error occurred
        recoverable: Whether a rerun with different settings can succeed
    """

    def __init__(
        self,
        message: str,
        error_code: str = "LRC_UNKNOWN",
        details: Optional[Dict[str, Any]] = None,
        recoverable: bool = False,
        cause: Optional[Exception] = None
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        self.timestamp = datetime.now(timezone.utc)
        self.recoverable = recoverable
        self.cause = cause

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for logging and audit output."""
        return {
            "error_type": self.__class__.__name__,
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
            "timestamp": self.timestamp.isoformat(),
            "recoverable": self.recoverable
        }

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.error_code}): {self.message}"


# ============== RIGOR ERRORS ==============

class RigorError(CertificationError):
    """Base class for interval arithmetic failures."""

    def __init__(self, message: str, **kwargs):
        super().__init__(message, error_code=kwargs.pop("error_code", "RIGOR_ERROR"), **kwargs)


class DomainError(RigorError):
    """An operation was applied outside the domain where it is defined."""

    def __init__(self, message: str, operation: str = "unknown", **kwargs):
        details = kwargs.pop("details", {})
        details.update({"operation": operation})
        super().__init__(
            message,
            error_code="DOMAIN_ERROR",
            details=details,
            recoverable=False,
            **kwargs
        )


# ============== DYNAMICS ERRORS ==============

class DynamicsError(CertificationError):
    """Base class for map certification and preimage failures."""

    def __init__(self, message: str, **kwargs):
        super().__init__(message, error_code=kwargs.pop("error_code", "DYNAMICS_ERROR"), **kwargs)


class NotExpanding(DynamicsError):
    """Expansion inf T' > 1 could not be certified."""

    def __init__(
        self,
        message: str,
        subinterval: Optional[tuple] = None,
        derivative: Optional[tuple] = None,
        **kwargs
    ):
        details = kwargs.pop("details", {})
        details.update({
            "subinterval": subinterval,
            "derivative_enclosure": derivative
        })
        super().__init__(
            message,
            error_code="NOT_EXPANDING",
            details=details,
            recoverable=False,
            **kwargs
        )


class NoConvergence(DynamicsError):
    """Interval Newton failed to reach the requested width."""

    def __init__(
        self,
        message: str,
        branch: Optional[int] = None,
        width: Optional[float] = None,
        tol: Optional[float] = None,
        **kwargs
    ):
        details = kwargs.pop("details", {})
        details.update({
            "branch": branch,
            "width": width,
            "tol": tol
        })
        super().__init__(
            message,
            error_code="NO_CONVERGENCE",
            details=details,
            recoverable=True,  # a wider tolerance usually succeeds
            **kwargs
        )


# ============== CERTIFICATE ERRORS ==============

class CertificateError(CertificationError):
    """Base class for failures of the contraction certificates."""

    def __init__(self, message: str, **kwargs):
        super().__init__(message, error_code=kwargs.pop("error_code", "CERTIFICATE_ERROR"), **kwargs)


class ContractionNotCertified(CertificateError):
    """A fixed-point bound was requested without a contracting certificate."""

    def __init__(self, message: str, rho: Optional[float] = None, **kwargs):
        details = kwargs.pop("details", {})
        details.update({"rho": rho})
        super().__init__(
            message,
            error_code="CONTRACTION_NOT_CERTIFIED",
            details=details,
            recoverable=True,  # finer partition
            **kwargs
        )


class NoContraction(CertificateError):
    """No iterate below the cap gave a contracting 2x2 certificate."""

    def __init__(
        self,
        message: str,
        cap: Optional[int] = None,
        best_rho: Optional[float] = None,
        **kwargs
    ):
        details = kwargs.pop("details", {})
        details.update({
            "cap": cap,
            "best_rho": best_rho
        })
        super().__init__(
            message,
            error_code="NO_CONTRACTION",
            details=details,
            recoverable=True,  # raise the cap or refine the partition
            **kwargs
        )


# ============== CONFIGURATION ERRORS ==============

class ConfigurationError(CertificationError):
    """Error related to run configuration."""

    def __init__(
        self,
        message: str,
        config_key: Optional[str] = None,
        **kwargs
    ):
        details = kwargs.pop("details", {})
        details.update({
            "config_key": config_key
        })
        super().__init__(
            message,
            error_code=kwargs.pop("error_code", "CONFIG_ERROR"),
            details=details,
            recoverable=False,
            **kwargs
        )


class ParseError(ConfigurationError):
    """Malformed config text or expression, with its location."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        column: Optional[int] = None,
        **kwargs
    ):
        details = kwargs.pop("details", {})
        details.update({
            "line": line,
            "column": column
        })
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where, error_code="PARSE_ERROR", details=details, **kwargs)


# ============== HELPER FUNCTIONS ==============

EXIT_OK = 0
EXIT_BUDGET_EXCEEDED = 1
EXIT_CERTIFICATION_FAILED = 2
EXIT_CONFIG_FAILED = 3


def exit_code_for(error: Exception) -> int:
    """Map an exception to the CLI exit status."""
    if isinstance(error, ConfigurationError):
        return EXIT_CONFIG_FAILED
    return EXIT_CERTIFICATION_FAILED


def get_error_summary(error: Exception) -> Dict[str, Any]:
    """Get a summary of an error for the audit log."""
    if isinstance(error, CertificationError):
        return error.to_dict()

    return {
        "error_type": type(error).__name__,
        "error_code": "UNKNOWN",
        "message": str(error),
        "details": {},
        "recoverable": False
    }
