"""Assumption-indexed estimators for principal-stratum contrasts."""
from ..resample import BootstrapCI, bootstrap_ci
from .bounds import BoundsResult, trimming_bounds
from .cace import wald_cace
from .ignorability import (
    fit_membership,
    pi_multiple_imputation,
    pi_standardization,
    pi_weighting,
)
from .logistic import PropensityModel, fit_logistic
from .mixture import MixtureFit, em_mixture
from .naive import naive_conditioning

__all__ = [
    "BootstrapCI",
    "BoundsResult",
    "MixtureFit",
    "PropensityModel",
    "bootstrap_ci",
    "em_mixture",
    "fit_logistic",
    "fit_membership",
    "naive_conditioning",
    "pi_multiple_imputation",
    "pi_standardization",
    "pi_weighting",
    "trimming_bounds",
    "wald_cace",
]
