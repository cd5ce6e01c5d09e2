"""Exception hierarchy shared by all pipeline stages.

Every error raised by this package derives from CimError so callers can
catch one base class. The CLI maps each subclass to a distinct exit code.
"""


class CimError(Exception):
    """Base class for all errors raised by this package."""


# --- file ingestion ---

class MalformedFile(CimError):
    """File cannot be parsed: bad magic, truncated header, invalid JSON,
    payload size disagreeing with the declared shape, etc."""


class UnsupportedDtype(MalformedFile):
    """Tensor element type is not little-endian float32/float64."""


class UnsupportedRank(MalformedFile):
    """Tensor rank is neither 1 (feature vector) nor 3 (feature map)."""


class NonFiniteValue(CimError):
    """Loaded data contains NaN or infinity."""


class EmptyBox(CimError):
    """Bounding box has zero width or height."""


class OutOfImageBounds(CimError):
    """Bounding box extends past the declared image frame."""


# --- numeric core ---

class ShapeMismatch(CimError):
    """Operands have inconsistent dimensions."""


class SingularSystem(CimError):
    """The regularized Gram system could not be factorized."""


class NonFiniteIterate(CimError):
    """Solver iterates diverged to NaN/Inf."""


class InstanceTooLarge(CimError):
    """Problem exceeds the size limit of the brute-force reference solver."""


# --- scoring ---

class InvalidThreshold(CimError):
    """Threshold fraction outside the open interval (0, 1)."""


class NoBoxes(CimError):
    """An image was scored without any bounding box."""


class EmptyInput(CimError):
    """Aggregation over an empty score list."""
