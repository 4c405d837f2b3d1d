"""Exception hierarchy shared by all pipeline stages.

Exit-code mapping used by the CLI:
  2 -> ParseError family (malformed files, bad config)
  3 -> IntegrityError family (inconsistent or unusable data)
  4 -> TransportError / ProtocolError (segmenter bridge)
  5 -> DivergenceError (training blew up)
"""


class SegNerfError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParseError(SegNerfError):
    """Malformed input file; carries path and position context."""

    exit_code = 2

    def __init__(self, message, path=None, line=None, offset=None):
        ctx = []
        if path is not None:
            ctx.append(str(path))
        if line is not None:
            ctx.append(f"line {line}")
        if offset is not None:
            ctx.append(f"offset {offset}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedModelError(ParseError):
    """COLMAP camera model with distortion parameters."""


class ConfigError(ParseError):
    """Unknown or invalid configuration key/value."""


class IntegrityError(SegNerfError):
    """Structurally valid data that violates a cross-reference or usability invariant."""

    exit_code = 3


class EmptyMaskError(IntegrityError):
    """Segmentation produced no pixels for the given prompts."""


class UninitializableObjectError(IntegrityError):
    """Initial mask contains no linked feature points."""


class EmptyObjectError(IntegrityError):
    """Object point list is empty where a non-empty one is required."""


class InsufficientPointsError(IntegrityError):
    """Fewer projected points than a geometric construction needs."""


class DegenerateBoxError(IntegrityError):
    """Bounding box with zero extent on some axis."""


class BandEmptyError(IntegrityError):
    """Distance band selected no pixels."""

    def __init__(self, message, suggested_band=None):
        super().__init__(message)
        self.suggested_band = suggested_band


class NotFoundError(IntegrityError):
    """Detector returned no boxes for the requested text."""


class TransportError(SegNerfError):
    """Bridge unreachable, timed out, or dropped the connection."""

    exit_code = 4


class ProtocolError(SegNerfError):
    """Bridge reply violated the wire protocol."""

    exit_code = 4


class DivergenceError(SegNerfError):
    """Training produced NaN/Inf; carries the last finite checkpoint."""

    exit_code = 5

    def __init__(self, message, last_good=None, iteration=None):
        super().__init__(message)
        self.last_good = last_good
        self.iteration = iteration
