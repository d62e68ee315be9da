"""Error types shared across the engine.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit codes: 2 usage/validation, 3 I/O, 4 internal.
"""


class EbeError(Exception):
    """Base class for all engine errors."""

    exit_code = 4


class FormatError(EbeError):
    """Tensor container is malformed or uses an unsupported dtype/order/version."""

    exit_code = 2


class DataError(EbeError):
    """Payload values violate a data invariant (non-finite, label out of range)."""

    exit_code = 2

    def __init__(self, message, *, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ManifestError(EbeError):
    """Dataset manifest is invalid or references missing/mismatched files."""

    exit_code = 2


class ShapeError(EbeError):
    """Dimension or length mismatch between paired inputs."""

    exit_code = 2


class ParamError(EbeError):
    """Parameter outside its valid range (e.g. k not in 1..n)."""

    exit_code = 2


class IoError(EbeError):
    """Filesystem operation failed."""

    exit_code = 3
