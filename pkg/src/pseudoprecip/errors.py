"""Exception types raised across the package.

Every error carries a human-readable message naming the offending file
offset, step index or parameter so pipeline failures are diagnosable
from logs alone.
"""


class PseudoPrecipError(Exception):
    """Base class for all package errors."""


# --- grid / file format ---

class MalformedHeader(PseudoPrecipError):
    """PPG header is missing, truncated or carries an unknown field code."""


class MalformedInput(PseudoPrecipError):
    """Degenerate or inconsistent in-memory input (e.g. zero-step series)."""


class DimensionMismatch(PseudoPrecipError):
    """Array sizes disagree with the declared grid dimensions."""


class NonFiniteValue(PseudoPrecipError):
    """An unmasked cell holds NaN or infinity."""


class NegativeTP(PseudoPrecipError):
    """A precipitation cell is negative."""


class IoFailure(PseudoPrecipError):
    """Underlying OS-level read/write failure."""


class EmptyIntersection(PseudoPrecipError):
    """Crop window does not intersect the grid."""


# --- synthetic generator ---

class TooSmallGrid(PseudoPrecipError):
    """Spectral synthesis needs at least 8 cells per axis."""


# --- network engine ---

class BadWidths(PseudoPrecipError):
    """Layer width list is too short or non-positive."""


class ShapeMismatch(PseudoPrecipError):
    """Operand shapes are inconsistent."""


class MalformedCheckpoint(PseudoPrecipError):
    """Checkpoint file is truncated or structurally invalid."""


class VersionMismatch(PseudoPrecipError):
    """Checkpoint magic does not match the supported format."""


# --- blending / training ---

class EmptySample(PseudoPrecipError):
    """Quantile estimation needs a nonempty sample."""


class BadProb(PseudoPrecipError):
    """Probability outside the open interval (0, 1)."""


class BatchTooSmall(PseudoPrecipError):
    """Batch too short for stable quantile estimation."""


class InsufficientData(PseudoPrecipError):
    """Not enough valid points to train."""


class NonFiniteLoss(PseudoPrecipError):
    """Training loss became NaN/inf; best checkpoint is preserved.

    Attributes carry the salvaged state: ``model`` (best checkpoint so
    far) and ``history`` (records up to the failure).
    """

    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history


class GeometryMismatch(PseudoPrecipError):
    """Two series do not share geometry or timestamps."""


# --- spectral ---

class BadDimensions(PseudoPrecipError):
    """Field dimensions unsuitable for the transform."""


class BadFactor(PseudoPrecipError):
    """Coarsening factor incompatible with the grid."""


# --- downscaler ---

class SingularSystem(PseudoPrecipError):
    """Normal equations are rank deficient and unregularized."""


# --- evaluation ---

class SeriesTooShort(PseudoPrecipError):
    """Series shorter than one PSD segment."""


class MisalignedSeries(PseudoPrecipError):
    """Series does not start on a day boundary or has ragged days."""


# --- cli ---

class ConfigError(PseudoPrecipError):
    """Pipeline configuration is invalid."""
