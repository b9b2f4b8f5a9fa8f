"""Exception hierarchy shared by every lighthouse module."""

from __future__ import annotations


class LighthouseError(Exception):
    """Base class for all errors raised by this package."""

    code = "lighthouse_error"


class InvalidCoordinate(LighthouseError, ValueError):
    code = "invalid_coordinate"


class OutOfRange(LighthouseError, IndexError):
    code = "out_of_range"


class DegenerateRing(LighthouseError, ValueError):
    code = "degenerate_ring"

    def __init__(self, ring_index: int, reason: str):
        super().__init__(f"ring {ring_index}: {reason}")
        self.ring_index = ring_index


class NotALandTile(LighthouseError):
    code = "not_a_land_tile"


class EmptyTree(LighthouseError):
    code = "empty_tree"


class InvalidParameter(LighthouseError, ValueError):
    code = "invalid_parameter"


class InvalidCapacity(InvalidParameter):
    code = "invalid_capacity"


# -- binary formats ---------------------------------------------------------


class FormatError(LighthouseError):
    code = "format_error"


class BadMagic(FormatError):
    code = "bad_magic"


class VersionMismatch(FormatError):
    code = "version_mismatch"


class TruncatedPayload(FormatError):
    code = "truncated_payload"


class IndexOutOfBounds(FormatError):
    code = "index_out_of_bounds"


class ChecksumMismatch(FormatError):
    code = "checksum_mismatch"


# -- datasets ---------------------------------------------------------------


class ManifestError(LighthouseError):
    code = "manifest_error"


class MissingFile(ManifestError):
    code = "missing_file"

    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = path


class DuplicateTile(ManifestError):
    code = "duplicate_tile"


class DimensionMismatch(LighthouseError, ValueError):
    code = "dimension_mismatch"


class NoCoastline(LighthouseError):
    """Raised when a dataset contains no coastal points at all."""

    code = "no_coastline"
