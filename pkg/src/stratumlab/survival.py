"""Weighted product-limit curves, survival and RMST contrasts, landmarking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import km_table
from .core import (
    Contrast,
    EstimandSpec,
    EstimateResult,
    OutcomeKind,
    TrialData,
    as_trial,
    ess,
    summarize_ci,
)
from .errors import DataError, EstimationError


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Right-continuous step function S(t) = prod_{t_i <= t} (1 - d_i / n_i).

    ``times`` are the distinct event times, ``survival`` the value just
    after each, ``at_risk``/``events`` the weighted counts. ``follow_up`` is
    the largest observed time, event or censoring.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    follow_up: float

    def evaluate(self, t) -> np.ndarray | float:
        idx = np.searchsorted(self.times, t, side="right") - 1
        vals = np.where(idx >= 0, self.survival[np.maximum(idx, 0)] if self.survival.size else 1.0, 1.0)
        return float(vals) if np.ndim(t) == 0 else vals

    def __call__(self, t):
        return self.evaluate(t)


def weighted_km(times, events, weights=None) -> SurvivalCurve:
    """Product-limit estimate with weighted event and at-risk sums.

    Events precede censorings at tied times, so a record censored at t is
    still at risk for events at t.
    """
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events, dtype=np.float64)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64)
    if not (t.shape == e.shape == w.shape) or t.ndim != 1:
        raise ValueError("times, events and weights must be equal-length vectors")
    if t.size == 0:
        raise EstimationError("no records for the survival curve")
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DataError("event times must be nonnegative")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.sum(w) > 0:
        raise EstimationError("all weights are zero")
    order = np.lexsort((-e, t))
    tt, rr, dd, ss = km_table(t[order], e[order], w[order])
    return SurvivalCurve(tt, ss, rr, dd, float(t.max()))


def _check_follow_up(t_star: float, *curves: SurvivalCurve) -> None:
    for c in curves:
        if t_star > c.follow_up:
            raise EstimationError(f"t* exceeds follow-up ({t_star:g} > {c.follow_up:g})")


def survival_diff_at(curve1: SurvivalCurve, curve0: SurvivalCurve, t_star: float) -> float:
    _check_follow_up(t_star, curve1, curve0)
    return curve1.evaluate(t_star) - curve0.evaluate(t_star)


def rmst(curve: SurvivalCurve, t_star: float) -> float:
    """Area under the step function on [0, t_star]."""
    _check_follow_up(t_star, curve)
    inside = curve.times < t_star
    knots = np.r_[0.0, curve.times[inside], t_star]
    levels = np.r_[1.0, curve.survival[inside]]
    return float(np.sum(levels * np.diff(knots)))


def rmst_diff(curve1: SurvivalCurve, curve0: SurvivalCurve, t_star: float) -> float:
    _check_follow_up(t_star, curve1, curve0)
    return rmst(curve1, t_star) - rmst(curve0, t_star)


def curve_contrast(curve1: SurvivalCurve, curve0: SurvivalCurve, spec: EstimandSpec) -> float:
    if spec.contrast is Contrast.SURVIVAL_DIFFERENCE:
        return survival_diff_at(curve1, curve0, spec.t_star)
    if spec.contrast is Contrast.RMST_DIFFERENCE:
        return rmst_diff(curve1, curve0, spec.t_star)
    raise EstimationError(f"{spec.contrast.value} is not a survival contrast")


class LandmarkedRecords(list):
    """Record list tagged with the landmark time it was restricted at."""

    def __init__(self, records=(), landmark: float = 0.0):
        super().__init__(records)
        self.landmark = landmark


def _restrict(data: TrialData, landmark: float) -> TrialData:
    keep = data.y >= landmark
    if not keep.any():
        raise EstimationError(f"no records followed beyond the landmark {landmark:g}")
    out = data.take(np.flatnonzero(keep)).with_landmark(landmark)
    if np.isnan(out.s).any():
        bad = out.ids[np.flatnonzero(np.isnan(out.s))[0]]
        raise EstimationError(f"intercurrent status missing after landmark (record {bad})")
    return out


def landmark_restriction(records, landmark: float):
    """Keep records whose event or censoring time is at least ``landmark``.

    Both arms are conditioned on follow-up beyond the landmark; the time
    scale is unchanged. A TrialData input returns a TrialData; a record list
    returns a :class:`LandmarkedRecords` list.
    """
    if not landmark >= 0:
        raise ValueError("landmark must be nonnegative")
    if isinstance(records, TrialData):
        if records.kind is not OutcomeKind.TIME_TO_EVENT:
            raise EstimationError("landmark restriction needs a time-to-event outcome")
        return _restrict(records, landmark)
    records = list(records)
    if any(r.y.kind is not OutcomeKind.TIME_TO_EVENT for r in records):
        raise EstimationError("landmark restriction needs a time-to-event outcome")
    kept = [r for r in records if r.y.time >= landmark]
    if not kept:
        raise EstimationError(f"no records followed beyond the landmark {landmark:g}")
    for r in kept:
        if r.s is None:
            raise EstimationError(f"intercurrent status missing after landmark (record {r.id})")
    return LandmarkedRecords(kept, landmark)


def _pi_survival_stat(data: TrialData, spec: EstimandSpec, covariates, arm: int, v: int):
    from .estimators.ignorability import membership_weights

    if spec.landmark is not None:
        data = _restrict(data, spec.landmark)
    direct = data.z == arm
    s = data.s[direct]
    if np.isnan(s).any():
        raise EstimationError(f"intercurrent status missing on arm {arm}")
    members = np.flatnonzero(direct)[s == v]
    if members.size == 0:
        raise EstimationError(f"stratum empty on {'treated' if arm == 1 else 'control'} arm")
    other = data.z != arm
    if not other.any():
        raise EstimationError("arm has no records")
    w, model, clipped = membership_weights(data, arm, v, covariates)
    c_direct = weighted_km(data.y[members], data.event[members])
    c_other = weighted_km(data.y[other], data.event[other], w)
    c1, c0 = (c_direct, c_other) if arm == 1 else (c_other, c_direct)
    return curve_contrast(c1, c0, spec), w, model, clipped, members.size


def stratum_survival_contrast(
    records,
    spec: EstimandSpec,
    covariates: Sequence[str] = (),
    method: str = "pi_weighting",
    *,
    n_boot: int = 1000,
    seed: int = 0,
) -> EstimateResult:
    """Survival difference or RMST difference in a stratum {S(z)=v}.

    The defining arm contributes an unweighted curve of its stratum members;
    the other arm contributes a curve over all its records weighted by the
    predicted membership probability. With a landmark in ``spec`` each
    bootstrap resample is drawn first and restricted afterwards.
    """
    from .estimators.ignorability import _model_diag, defining_arm

    if method != "pi_weighting":
        raise ValueError(f"unsupported method {method!r}; only 'pi_weighting' is available")
    data = as_trial(records)
    spec.check_outcome(data.kind)
    arm, v = defining_arm(spec)
    covariates = tuple(covariates)

    def stat(d):
        return _pi_survival_stat(d, spec, covariates, arm, v)[0]

    est, w, model, clipped, n_direct = _pi_survival_stat(data, spec, covariates, arm, v)
    lo, hi, diag = summarize_ci(stat, data, n_boot, seed)
    n_eff = ess(w)
    diag.update(_model_diag(model, clipped, n_eff, n_direct))
    if spec.landmark is not None:
        diag["landmark"] = spec.landmark
        diag["n_after_landmark"] = int(np.sum(data.y >= spec.landmark))
    return EstimateResult(est, lo, hi, "pi_weighting_km", n_eff, diag)


def itt_survival(records, spec: EstimandSpec, *, n_boot: int = 1000, seed: int = 0) -> EstimateResult:
    """Whole-population survival or RMST contrast from unweighted arm curves.

    Any landmark in ``spec`` is ignored: the ITT contrast conditions on
    nothing after randomization.
    """
    data = as_trial(records)
    spec.check_outcome(data.kind)
    if not spec.contrast.is_survival:
        raise EstimationError("itt_survival needs a survival contrast")

    def stat(d):
        t, c = d.z == 1, d.z == 0
        if not t.any() or not c.any():
            raise EstimationError("arm has no records")
        c1 = weighted_km(d.y[t], d.event[t])
        c0 = weighted_km(d.y[c], d.event[c])
        return curve_contrast(c1, c0, spec)

    est = stat(data)
    lo, hi, diag = summarize_ci(stat, data, n_boot, seed)
    if spec.landmark is not None:
        diag["landmark_ignored"] = spec.landmark
    return EstimateResult(est, lo, hi, "itt_km", float(data.n), diag)


__all__ = [
    "LandmarkedRecords",
    "SurvivalCurve",
    "curve_contrast",
    "itt_survival",
    "landmark_restriction",
    "rmst",
    "rmst_diff",
    "stratum_survival_contrast",
    "survival_diff_at",
    "weighted_km",
]

