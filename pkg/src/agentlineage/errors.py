"""Exception taxonomy shared across the package.

Verification of untrusted input never raises: those paths return verdict
enums.  Exceptions are reserved for caller mistakes (bad ranges, missing
fields), service-side admission control, and transport failures.
"""

from __future__ import annotations


class LineageError(Exception):
    """Base class for all package errors."""


class EncodingError(LineageError):
    """A value cannot be canonically encoded (missing/ill-typed field)."""


class IdentityBindingError(LineageError):
    """Signer identity does not match the event's claimed agent_id."""


class CardFetchError(LineageError):
    """Agent card could not be retrieved (network, HTTP status, size cap)."""


class CardParseError(LineageError):
    """Retrieved agent card body is not a valid card document."""


class SubmissionRejected(LineageError):
    """Lineage store refused an event at admission control.

    `reason` is a stable machine-readable code: bad_signature,
    unknown_agent, unknown_prev, or duplicate.
    """

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class NotFoundError(LineageError):
    """A requested event digest is not present in any configured log."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class AuditFailure(LineageError):
    """The proof server's audit of an upstream log failed.

    Raised before any signature is issued; the incident is recorded on the
    server so equivocating logs leave a trace.
    """

    def __init__(self, log_id: str, reason: str):
        super().__init__(f"audit failure on log {log_id}: {reason}")
        self.log_id = log_id
        self.reason = reason


class TransportError(LineageError):
    """A network operation failed; distinct from any verification verdict."""
