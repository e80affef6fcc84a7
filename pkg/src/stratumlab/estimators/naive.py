"""Subgroup analysis on observed intercurrent status (the biased baseline)."""
from __future__ import annotations

import numpy as np

from ..core import (
    EstimandSpec,
    EstimateResult,
    PrincipalStratum,
    TrialData,
    as_trial,
    contrast_value,
    summarize_ci,
)
from ..errors import EstimationError

BIASED_UNLESS = "S(1)=S(0) for all subjects"


def _subset_value(spec: EstimandSpec) -> int:
    d = spec.stratum.defining_arm()
    if d is not None:
        return d[1]
    if len(spec.stratum) == 1:
        (cell,) = spec.stratum.members
        if cell in (PrincipalStratum.BOTH, PrincipalStratum.NEITHER):
            return cell.s0
    raise EstimationError(
        f"naive conditioning needs a stratum {{S(z)=v}} or a concordant cell, got {spec.stratum.label()}"
    )


def _naive_stat(data: TrialData, v: int, spec: EstimandSpec) -> float:
    if np.isnan(data.s).any():
        raise EstimationError("intercurrent status missing; apply a landmark first")
    keep = data.s == v
    t, c = keep & (data.z == 1), keep & (data.z == 0)
    if not t.any() or not c.any():
        raise EstimationError("empty subset on one arm")
    if spec.contrast.is_survival:
        from ..survival import curve_contrast, weighted_km

        ev = data.event
        c1 = weighted_km(data.y[t], ev[t], np.ones(int(t.sum())))
        c0 = weighted_km(data.y[c], ev[c], np.ones(int(c.sum())))
        return curve_contrast(c1, c0, spec)
    return contrast_value(float(np.mean(data.y[t])), float(np.mean(data.y[c])), spec.contrast)


def naive_conditioning(records, spec: EstimandSpec, *, n_boot: int = 1000, seed: int = 0) -> EstimateResult:
    """Compare arms within the subsets whose *observed* S matches the stratum.

    Estimates a causal effect only if treatment never changes S.
    """
    data = as_trial(records)
    spec.check_outcome(data.kind)
    v = _subset_value(spec)
    if spec.landmark is not None:
        from ..survival import landmark_restriction

        stat = lambda d: _naive_stat(landmark_restriction(d, spec.landmark), v, spec)  # noqa: E731
    else:
        stat = lambda d: _naive_stat(d, v, spec)  # noqa: E731
    est = stat(data)
    lo, hi, diag = summarize_ci(stat, data, n_boot, seed)
    diag["biased_unless"] = BIASED_UNLESS
    diag["subset_s"] = v
    n_used = float(np.sum(data.s == v))
    return EstimateResult(est, lo, hi, "naive", n_used, diag)
