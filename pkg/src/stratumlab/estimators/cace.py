"""Wald ratio for the stratum whose status treatment changes."""
from __future__ import annotations

import numpy as np

from ..core import (
    EstimateResult,
    Monotonicity,
    OutcomeKind,
    TrialData,
    arm_rates,
    as_trial,
    stratum_proportions_monotone,
    summarize_ci,
)
from ..errors import EstimationError

MIN_DENOMINATOR = 1e-6


def _wald(data: TrialData, direction: Monotonicity) -> float:
    stratum_proportions_monotone(data, direction)
    p0, p1 = arm_rates(data)
    denom = p1 - p0
    if abs(denom) <= MIN_DENOMINATOR:
        raise EstimationError("treatment does not move S; CACE not identified")
    diff = float(np.mean(data.y[data.z == 1])) - float(np.mean(data.y[data.z == 0]))
    return diff / denom


def wald_cace(records, direction: Monotonicity | str, *, n_boot: int = 1000, seed: int = 0) -> EstimateResult:
    """ITT mean difference divided by the difference in S rates.

    Valid for the treatment-moved stratum under monotonicity plus the
    exclusion restriction (no effect where treatment leaves S unchanged).
    """
    data = as_trial(records)
    direction = Monotonicity(direction)
    if data.kind is OutcomeKind.TIME_TO_EVENT:
        raise EstimationError("wald_cace needs a binary or continuous outcome")
    est = _wald(data, direction)
    lo, hi, diag = summarize_ci(lambda d: _wald(d, direction), data, n_boot, seed)
    p0, p1 = arm_rates(data)
    diag.update({"p_s1_control": p0, "p_s1_test": p1, "first_stage": p1 - p0})
    return EstimateResult(est, lo, hi, "cace", float(data.n), diag)
