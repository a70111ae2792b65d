"""Contains all scwm-reid custom exceptions."""


class ScwmException(Exception):
    """Base exception type for everything raised on purpose by scwm-reid."""

    def __init__(self, message: str):  # noqa D107
        super().__init__(f"{message}")


class ShapeMismatchError(ScwmException):
    """Thrown when two arrays that must agree on their extents do not."""


class ZeroVectorError(ScwmException):
    """Thrown when asked to l2-normalise a vector whose norm is zero."""


class NonPositiveProbabilityError(ScwmException):
    """Thrown when a log is taken of a predicted probability that is not strictly positive."""


class InvalidParameterError(ScwmException):
    """Thrown when an argument lies outside of its documented range."""


class ConfigError(ScwmException):
    """Thrown when the pipeline configuration cannot be validated."""


class NoConfigFound(ScwmException):
    """Thrown when an explicitly passed config path does not exist."""


class YAMLFileEmptyError(ScwmException):
    """Thrown when a yamlfile existed but had nothing in it."""


class EmptyClusteringError(ScwmException):
    """Thrown when identity clustering marks every sample as an outlier."""


class UnknownLabelError(ScwmException):
    """Thrown when a pseudo label has no centroid in the memory bank."""


class DegenerateSplitError(ScwmException):
    """Thrown when an evaluation split leaves nothing to evaluate."""


class TensorFormatError(ScwmException):
    """Base class for tensor file errors. Each subclass has its own `error_code`."""

    error_code = 1


class TensorMagicError(TensorFormatError):
    """Thrown when a tensor file does not start with the expected magic bytes."""

    error_code = 2


class TensorVersionError(TensorFormatError):
    """Thrown when a tensor file was written with an unsupported format version."""

    error_code = 3


class TensorRankError(TensorFormatError):
    """Thrown when a tensor has more dimensions than the format supports."""

    error_code = 4


class TensorTruncatedError(TensorFormatError):
    """Thrown when a tensor file ends before its header or payload is complete."""

    error_code = 5


class NonFiniteTensorError(TensorFormatError):
    """Thrown when a tensor holds NaN or infinite values."""

    error_code = 6


class TensorTrailingBytesError(TensorFormatError):
    """Thrown when a tensor file holds more bytes than its header announces."""

    error_code = 7
