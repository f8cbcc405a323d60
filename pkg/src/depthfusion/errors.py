"""Exception hierarchy shared across the toolkit.

CLI exit-code mapping: ConfigError -> 2, DataError (and subclasses) -> 3,
NumericalError -> 4.
"""


class DepthFusionError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DepthFusionError):
    """Invalid configuration: bad shapes, bad hyperparameters, bad config keys."""


class DataError(DepthFusionError):
    """Invalid data fed to an operation (bad labels, non-positive depths, ...)."""


class FormatError(DataError):
    """Malformed on-disk file (PPM / DPTH / checkpoint)."""


class ManifestError(DataError):
    """Malformed or inconsistent dataset manifest."""


class EvaluationError(DataError):
    """Evaluation impossible: empty validity mask, all pixels capped out, ..."""


class NumericalError(DepthFusionError):
    """Non-finite values where finite ones are required (NaN loss, failed checks)."""
