"""Exception hierarchy shared by every module."""


class StratumLabError(Exception):
    """Base class for all package errors."""


class DataError(StratumLabError, ValueError):
    """Malformed or inconsistent trial data."""


class ConfigError(StratumLabError, ValueError):
    """Invalid simulation or analysis configuration."""


class EstimationError(StratumLabError, ValueError):
    """An estimator cannot produce a value on the given data."""


class MonotonicityViolation(EstimationError):
    """Observed arm-wise S rates contradict the declared monotonicity direction.

    ``value`` holds the (negative) implied proportion of the middle stratum.
    """

    def __init__(self, message: str, value: float):
        super().__init__(f"{message} (implied proportion {value:.6g})")
        self.value = value


class SeparationError(EstimationError):
    """Logistic fit diverges; the propensity is not identified."""
