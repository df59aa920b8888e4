"""Exception types raised by ternpack."""

from __future__ import annotations


class TernpackError(ValueError):
    """Base class for all ternpack errors. Subclasses ValueError so generic
    callers that catch ValueError keep working."""


class ManifestError(TernpackError):
    """Manifest file is unreadable, malformed, or references bad payloads."""


class TensorDataError(TernpackError):
    """Tensor payload violates an invariant (non-finite values, bad shape)."""


class ContainerError(TernpackError):
    """Packed-tensor container is malformed (magic, sizes, checksum, trit bytes)."""


class CalibrationError(TernpackError):
    """Calibration data or Gram matrix is unusable for the requested operation."""
