"""Principal-stratum estimands for randomized trials with intercurrent events.

Estimators are indexed by the assumption they rely on (bounds, monotonicity
with exclusion restriction, principal ignorability, parametric mixtures),
and a potential-outcome simulator supplies ground truth for all of them.
"""
from ._kernels import USING_NUMBA
from .core import (
    CELLS,
    Arm,
    Contrast,
    EstimandSpec,
    EstimateResult,
    Monotonicity,
    ObservedRecord,
    Outcome,
    OutcomeKind,
    PotentialRecord,
    PrincipalStratum,
    StratumSet,
    TrialData,
    classify_stratum,
    itt_effect,
    stratum_proportions_monotone,
)
from .errors import (
    ConfigError,
    DataError,
    EstimationError,
    MonotonicityViolation,
    SeparationError,
    StratumLabError,
)

__version__ = "0.1.0"

__all__ = [
    "CELLS",
    "USING_NUMBA",
    "Arm",
    "ConfigError",
    "Contrast",
    "DataError",
    "EstimandSpec",
    "EstimateResult",
    "EstimationError",
    "Monotonicity",
    "MonotonicityViolation",
    "ObservedRecord",
    "Outcome",
    "OutcomeKind",
    "PotentialRecord",
    "PrincipalStratum",
    "SeparationError",
    "StratumLabError",
    "StratumSet",
    "TrialData",
    "classify_stratum",
    "itt_effect",
    "stratum_proportions_monotone",
]
