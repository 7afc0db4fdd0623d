"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array has the wrong rank or an axis with an unusable extent."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class InfeasibleAlignmentError(ValueError):
    """The label sequence cannot be aligned to the available time steps."""


class UndefinedMetricError(ValueError):
    """A metric was requested over data for which it has no value."""


class VersionMismatchError(ValueError):
    """A serialized file was written by an incompatible format version."""


class ChecksumError(ValueError):
    """A serialized file failed integrity verification."""


class NonFiniteGradientError(RuntimeError):
    """An optimizer step saw a NaN or infinite gradient."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss and cannot continue."""
