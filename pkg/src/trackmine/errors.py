"""Exception hierarchy shared across the toolkit.

``TrackmineError`` is the common base so the CLI can map any domain error
to exit code 3 without enumerating subclasses.
"""


class TrackmineError(Exception):
    """Base class for all data / domain errors raised by this package."""


class SizeMismatchError(TrackmineError):
    """RLE counts do not sum to height*width, or mask shapes differ."""


class DanglingIdError(TrackmineError):
    """A selection log references a tracklet id that does not exist."""


class DegenerateBatchError(TrackmineError):
    """Triplet batch with fewer than 2 classes or 2 samples per class."""


class InsufficientClassesError(TrackmineError):
    """Training dataset has fewer classes than the batch requires."""


class EmptyTrackError(TrackmineError):
    """Representative embedding requested for a track with no crops."""


class ZeroVectorError(TrackmineError):
    """L2 normalization of the zero vector."""


class TooFewPointsError(TrackmineError):
    """Clustering input smaller than the configuration allows."""


class LengthMismatchError(TrackmineError):
    """True and predicted label sequences differ in length."""


class EmptyRemainderError(TrackmineError):
    """An outlier fraction removed every scored point."""


class OutOfBoundsError(TrackmineError):
    """Anchor box extends outside the image."""


class MissingPositionsError(TrackmineError):
    """Cyclist merging requested on tracks without footpoint positions."""


class InconsistentInputsError(TrackmineError):
    """Mining statistics inputs contradict each other."""
