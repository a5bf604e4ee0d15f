"""Exception hierarchy shared by all lcaffect modules."""


class LcaffectError(Exception):
    """Base class for all package errors."""


class ConfigError(LcaffectError):
    """Bad or unknown configuration (CLI exit code 2)."""


class DataError(LcaffectError):
    """Bad input data (CLI exit code 3)."""


class NotXml(DataError):
    """Input document is not parseable XML."""


class VideoTooShort(DataError):
    """Video duration does not exceed twice the trim length."""


class TooFewSegments(DataError):
    """Not enough segments to perform a validation split."""


class ShapeMismatch(LcaffectError):
    """Tensor shapes are inconsistent with the operation's contract."""


class NonFiniteValue(LcaffectError):
    """A NaN or Inf appeared in a computed tensor."""


class NotScalarLoss(LcaffectError):
    """backward() was called on a non-scalar value."""


class EmptySequence(LcaffectError):
    """An operation requiring at least one row received none."""


class EmptyPositiveRow(LcaffectError):
    """A contrastive target row has no positive columns."""


class NonPositiveTemperature(LcaffectError):
    """Contrastive temperature must be strictly positive."""


class EmptyMedia(DataError):
    """Media for feature extraction has no usable duration."""


class EmptyAfterFiltering(LcaffectError):
    """A metric's sample filter removed every sample."""


class DegenerateVariance(LcaffectError):
    """Labels are all equal; correlation / R^2 undefined."""


class DegenerateLabels(LcaffectError):
    """Classification labels contain a single class."""
