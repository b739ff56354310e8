"""Exception types shared across the package."""


class TsuqError(Exception):
    """Base class for all package errors."""


class FormatError(TsuqError):
    """Malformed input file: ragged rows, bad header, unparseable numbers."""


class ValidationError(TsuqError):
    """Input violates a documented invariant or precondition."""


class NumericalError(TsuqError):
    """A numerical routine failed to produce a usable result."""


class MissingArtifactError(TsuqError):
    """A pipeline stage requires an artifact that is not on disk."""
