"""Shared exception types."""


class PocscreenError(Exception):
    """Base class for all package errors."""


class AnnotationError(PocscreenError):
    """Malformed or out-of-range annotation input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ImagingError(PocscreenError):
    """Degenerate crops, empty pools, unusable reference regions."""


class ContractMismatchError(PocscreenError):
    """Feature-contract version or length does not match the model."""


class NonConvergenceError(PocscreenError):
    """Iterative solver hit its sweep cap; carries the last iterate."""

    def __init__(self, message: str, model=None):
        super().__init__(message)
        self.model = model


class ModelFormatError(PocscreenError):
    """Corrupt or truncated model payload."""


class ModelVersionError(PocscreenError):
    """Model payload written by an unknown format version."""


class UndefinedMetricError(PocscreenError):
    """Metric denominator is zero for the given confusion matrix."""


class VaultError(PocscreenError):
    """Base class for encrypted-store errors."""


class IntegrityError(VaultError):
    """Authentication tag or padding check failed; no plaintext released."""


class CorruptRecordError(VaultError):
    """Blob authenticated but its contents failed to parse."""


class RecordNotFoundError(VaultError):
    """No record stored under the requested id."""


class StoreLockedError(VaultError):
    """Another process holds the store's writer lock."""


class AuthenticationError(PocscreenError):
    """Uniform credential failure; never reveals which check failed."""


class AuthorizationError(PocscreenError):
    """Uniform access denial; audit log records the true cause."""


class SyncError(PocscreenError):
    """Sync protocol failure; local state is untouched."""
