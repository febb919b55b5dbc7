"""
Exception Classes

This module defines all custom exception classes used in the project.
"""

from typing import Optional


class CapguardError(Exception):
    """Base class for all capguard errors"""


class ConfigError(CapguardError):
    """Raised when configuration cannot be loaded or is inconsistent"""

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.path = path
        self.line = line


class TokenEncodingError(CapguardError):
    """Raised when a token field is out of bounds or bytes cannot be decoded"""

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        super().__init__(message)
        self.field = field


class SigningKeyError(CapguardError):
    """Raised for degenerate keys or a key used for the wrong token kind"""

    def __init__(
        self,
        message: str,
        kind: Optional[str] = None,
        modulus_bits: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.kind = kind
        self.modulus_bits = modulus_bits


class UnknownAuthorityError(CapguardError):
    """Raised when a token names an AA fingerprint missing from the directory"""

    def __init__(self, message: str, fingerprint: Optional[str] = None) -> None:
        super().__init__(message)
        self.fingerprint = fingerprint


class SeedRejectedError(CapguardError):
    """Raised when an AA refuses a capability seed or a pseudonym"""

    def __init__(
        self,
        message: str,
        reason: Optional[str] = None,
        rule: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.reason = reason
        self.rule = rule


class RateLimitedError(CapguardError):
    """Raised when a per-seed bucket has no token left"""

    def __init__(
        self,
        message: str,
        retry_after: Optional[float] = None,
        bucket: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.retry_after = retry_after
        self.bucket = bucket


class TransRejectedError(CapguardError):
    """Raised when a trans-capability cannot be redeemed"""

    def __init__(self, message: str, reason: Optional[str] = None) -> None:
        super().__init__(message)
        self.reason = reason


class PuzzleError(CapguardError):
    """Raised when a puzzle seed cannot be released or a schedule is infeasible"""

    def __init__(
        self,
        message: str,
        period_index: Optional[int] = None,
        pieces: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.period_index = period_index
        self.pieces = pieces


class PolicyError(CapguardError):
    """Raised when policy parameters are out of range"""

    def __init__(self, message: str, parameter: Optional[str] = None) -> None:
        super().__init__(message)
        self.parameter = parameter


class FrameError(CapguardError):
    """Raised when a relay frame is malformed"""

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        super().__init__(message)
        self.offset = offset


class CircuitError(CapguardError):
    """Raised when a circuit cannot be built"""

    def __init__(
        self,
        message: str,
        hop: Optional[int] = None,
        reason: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.hop = hop
        self.reason = reason


class ServiceError(CapguardError):
    """Raised when an HTTP service returns an error or cannot be reached"""

    def __init__(
        self,
        message: str,
        status_code: Optional[int] = None,
        response_data: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.status_code = status_code
        self.response_data = response_data


class StoreError(CapguardError):
    """Raised when a persistence operation fails"""

    def __init__(
        self, message: str, operation: Optional[str] = None, key: Optional[str] = None
    ) -> None:
        super().__init__(message)
        self.operation = operation
        self.key = key


class SimulationError(CapguardError):
    """Raised when a simulated network or scenario cannot be run"""

    def __init__(self, message: str, parameter: Optional[str] = None) -> None:
        super().__init__(message)
        self.parameter = parameter
