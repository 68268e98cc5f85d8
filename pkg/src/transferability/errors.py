class TransferabilityError(Exception):
    """Base class for errors raised by the transferability package."""


class ValidationError(TransferabilityError, ValueError):
    """Raised when inputs are out of range or inconsistent with each other."""


class UnsupportedOperationError(TransferabilityError, NotImplementedError):
    """Raised when an operation is not defined for the given variant."""


class InvariantViolation(TransferabilityError, AssertionError):
    """Raised when a checked inequality fails beyond its tolerance."""
