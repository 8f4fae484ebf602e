"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in :mod:`dnsplat.cli`; library code
raises these directly.
"""


class DnsplatError(Exception):
    """Base class for all package errors."""


class EmptyScene(DnsplatError):
    """Operation requires a scene with at least one Gaussian."""


class EmptyCloud(DnsplatError):
    """No valid points survived filtering."""


class EmptyMask(DnsplatError):
    """A masked reduction received zero valid pixels."""


class ShapeMismatch(DnsplatError):
    """Array arguments disagree on dimensions."""


class DegenerateCovariance(DnsplatError):
    """Projected 2D covariance is not invertible."""


class DegenerateFit(DnsplatError):
    """Least-squares system is rank deficient (constant regressor)."""


class InsufficientPairs(DnsplatError):
    """Fewer than two depth correspondences available."""


class ZeroQuaternion(DnsplatError):
    """Quaternion norm too small to normalize."""


class TooSmall(DnsplatError):
    """Image smaller than the operation's minimum support."""


class DegenerateMesh(DnsplatError):
    """Mesh has no positive-area faces."""


class NoFaces(DnsplatError):
    """Mesh file contains no face elements."""


class ParseError(DnsplatError):
    """Malformed file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(DnsplatError):
    """Scene checkpoint file is malformed."""


class DatasetError(DnsplatError):
    """Dataset directory violates the documented layout."""


class FixtureError(DnsplatError):
    """Synthetic fixture parameters are inconsistent (e.g. camera outside box)."""


class NumericFailure(DnsplatError):
    """Training produced a non-finite loss."""
