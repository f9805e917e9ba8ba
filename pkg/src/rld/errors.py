"""Exception types shared across the package."""


class DistillError(Exception):
    """Base class for all errors raised by this package."""


class InvalidLogit(DistillError):
    """Logit vector contains NaN/inf or has fewer than two entries."""


class InvalidLabel(DistillError):
    """Class label outside [0, num_classes)."""


class EmptySupport(DistillError):
    """A softmax was requested over an empty class subset."""


class SupportMismatch(DistillError):
    """Two probability vectors do not share the same support."""


class DivergenceInfinite(DistillError):
    """KL divergence is infinite (q has a zero where p is positive)."""


class ShapeError(DistillError):
    """Array shapes are inconsistent."""


class ConfigError(DistillError):
    """Invalid configuration value or key."""


class CacheError(DistillError):
    """Backward pass called with a stale forward cache."""


class IncompatibleTeacher(DistillError):
    """Teacher checkpoint does not match the dataset/student class count."""


class ProbeFailure(DistillError):
    """Loss returned a non-finite value while probing finite differences."""


class IoError(DistillError):
    """File could not be read or written, or has a bad format."""
