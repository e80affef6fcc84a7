"""Estimators for strata {S(a)=v} under principal ignorability.

The defining arm ``a`` reveals stratum membership directly; on the other
arm membership is predicted from baseline covariates by a logistic model
fitted on the defining arm. Contrasts are always oriented test vs control.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from ..core import (
    Contrast,
    EstimandSpec,
    EstimateResult,
    OutcomeKind,
    TrialData,
    as_trial,
    contrast_value,
    ess,
    summarize_ci,
    weighted_mean,
)
from ..errors import EstimationError
from .logistic import CLIP, PropensityModel, fit_logistic

ESS_WARNING = 10.0


def defining_arm(spec: EstimandSpec) -> tuple[int, int]:
    d = spec.stratum.defining_arm()
    if d is None:
        raise EstimationError(
            f"principal ignorability estimators need a stratum of the form {{S(z)=v}}, got {spec.stratum.label()}"
        )
    return d


def fit_membership(data: TrialData, arm: int, covariates: Sequence[str]) -> PropensityModel:
    """Logistic model for P(S=1 | X) on the defining arm."""
    mask = data.z == arm
    s = data.s[mask]
    if np.isnan(s).any():
        raise EstimationError(f"intercurrent status missing on arm {arm}")
    x = data.design_for(covariates)[mask]
    return fit_logistic(x, s, columns=data.columns_for(covariates), fitted_on=f"z={arm}")


def membership_weights(
    data: TrialData,
    arm: int,
    v: int,
    covariates: Sequence[str],
    model: PropensityModel | None = None,
):
    """Weights on the non-defining arm: predicted P(S(arm)=v | X), clipped.

    Returns (weights, model, number of clipped predictions).
    """
    if model is None:
        model = fit_membership(data, arm, covariates)
    x = data.design_for(covariates)[data.z != arm]
    raw = model.predict(x, clip=False)
    clipped = int(np.sum((raw < CLIP) | (raw > 1.0 - CLIP)))
    e = np.clip(raw, CLIP, 1.0 - CLIP)
    w = e if v == 1 else 1.0 - e
    return w, model, clipped


def _direct_outcomes(data: TrialData, arm: int, v: int) -> np.ndarray:
    mask = data.z == arm
    s = data.s[mask]
    if np.isnan(s).any():
        raise EstimationError(f"intercurrent status missing on arm {arm}")
    y = data.y[mask][s == v]
    if y.shape[0] == 0:
        raise EstimationError(f"stratum empty on {'treated' if arm == 1 else 'control'} arm")
    return y


def tilt_scale(data: TrialData, arm: int) -> np.ndarray:
    """Outcome used in the tilt: raw for binary, standardized for continuous."""
    y = data.y[data.z != arm]
    if data.kind is OutcomeKind.CONTINUOUS:
        sd = float(np.std(y, ddof=1)) if y.shape[0] > 1 else 0.0
        if not sd > 0:
            raise EstimationError("cannot standardize a constant outcome")
        return (y - float(np.mean(y))) / sd
    return y


def _pi_stat(data, arm, v, covariates, contrast, model=None, tilts=None):
    """Point estimate (or vector over ``tilts``) plus the base-weight diagnostics."""
    direct = _direct_outcomes(data, arm, v)
    m_direct = float(np.mean(direct))
    y_other = data.y[data.z != arm]
    if y_other.shape[0] == 0:
        raise EstimationError("arm has no records")
    w, model, clipped = membership_weights(data, arm, v, covariates, model)

    def one(weights):
        m_w = weighted_mean(y_other, weights)
        return contrast_value(m_direct, m_w, contrast) if arm == 1 else contrast_value(m_w, m_direct, contrast)

    if tilts is None:
        return one(w), w, model, clipped, direct.shape[0]
    # membership odds scaled by exp(beta) per unit of the other arm's outcome
    ty = tilt_scale(data, arm)
    vals = []
    for b in tilts:
        try:
            if b == 0.0:
                vals.append(one(w))
            else:
                vals.append(one(np.clip(expit(logit(w) + b * ty), CLIP, 1.0 - CLIP)))
        except EstimationError:
            vals.append(math.nan)
    return np.array(vals), w, model, clipped, direct.shape[0]


def _check(spec: EstimandSpec, data: TrialData):
    spec.check_outcome(data.kind)
    if spec.contrast.is_survival:
        raise EstimationError("use survival.stratum_survival_contrast for time-to-event contrasts")


def pi_weighting(
    records,
    spec: EstimandSpec,
    covariates: Sequence[str] = (),
    *,
    n_boot: int = 1000,
    seed: int = 0,
    propensity: PropensityModel | None = None,
) -> EstimateResult:
    """Propensity-weighted stratum contrast.

    The defining arm contributes the unweighted mean of records in the
    stratum; the other arm contributes all its records weighted by the
    predicted probability of stratum membership. Bootstrap resamples refit
    the membership model unless ``propensity`` is supplied.
    """
    data = as_trial(records)
    _check(spec, data)
    arm, v = defining_arm(spec)
    covariates = tuple(covariates)

    def stat(d):
        return _pi_stat(d, arm, v, covariates, spec.contrast, propensity)[0]

    est, w, model, clipped, n_direct = _pi_stat(data, arm, v, covariates, spec.contrast, propensity)
    lo, hi, diag = summarize_ci(stat, data, n_boot, seed)
    n_eff = ess(w)
    diag.update(_model_diag(model, clipped, n_eff, n_direct))
    return EstimateResult(est, lo, hi, "pi_weighting", n_eff, diag)


def _model_diag(model: PropensityModel, clipped: int, n_eff: float, n_direct: int) -> dict:
    diag = {
        "propensity_converged": bool(model.converged),
        "propensity_iterations": int(model.iterations),
        "propensity_coefficients": {
            name: float(c) for name, c in zip(("(intercept)",) + tuple(model.columns), model.coefficients)
        },
        "clipped_predictions": clipped,
        "ess_weighted_arm": n_eff,
        "n_defining_arm_in_stratum": int(n_direct),
    }
    if n_eff < ESS_WARNING:
        diag["warning"] = f"effective sample size {n_eff:.2f} below {ESS_WARNING:g}"
    return diag


def _cell_codes(data: TrialData, covariates: Sequence[str]) -> tuple[np.ndarray, list]:
    """Integer cell code per record (mixed radix over covariate levels)."""
    codes = np.zeros(data.n, dtype=np.int64)
    levels = []
    for c in covariates:
        lv, inv = np.unique(data.raw[c].astype(str), return_inverse=True)
        codes = codes * len(lv) + inv
        levels.append(lv)
    return codes, levels


def _cell_name(code: int, covariates: Sequence[str], levels: list) -> str:
    parts = []
    for c, lv in zip(reversed(covariates), reversed(levels)):
        code, j = divmod(int(code), len(lv))
        parts.append(f"{c}={lv[j]}")
    return ",".join(reversed(parts)) or "(all)"


def _std_stat(data, arm, v, covariates, contrast):
    direct = _direct_outcomes(data, arm, v)
    m_direct = float(np.mean(direct))
    codes, levels = _cell_codes(data, covariates)
    dmask = data.z == arm
    in_stratum = dmask.copy()
    in_stratum[dmask] = data.s[dmask] == v
    omask = ~dmask
    total = int(in_stratum.sum())
    m_std = 0.0
    for c in np.unique(codes[in_stratum]):
        share = np.sum(codes[in_stratum] == c) / total
        cell = omask & (codes == c)
        if not cell.any():
            raise EstimationError(f"positivity violated in cell {_cell_name(c, covariates, levels)}")
        m_std += share * float(np.mean(data.y[cell]))
    if arm == 1:
        return contrast_value(m_direct, m_std, contrast)
    return contrast_value(m_std, m_direct, contrast)


def pi_standardization(
    records,
    spec: EstimandSpec,
    covariates: Sequence[str] = (),
    *,
    n_boot: int = 1000,
    seed: int = 0,
) -> EstimateResult:
    """Standardize other-arm cell means to the covariate-cell mix of the
    defining-arm stratum members. Covariates act as discrete cells; bin
    continuous ones before calling."""
    data = as_trial(records)
    _check(spec, data)
    arm, v = defining_arm(spec)
    covariates = tuple(covariates)

    def stat(d):
        return _std_stat(d, arm, v, covariates, spec.contrast)

    est = stat(data)
    lo, hi, diag = summarize_ci(stat, data, n_boot, seed)
    n_other = float(np.sum(data.z != arm))
    diag["n_cells"] = int(len(np.unique(_cell_codes(data, covariates)[0])))
    return EstimateResult(est, lo, hi, "pi_standardization", n_other, diag)


def _component_var(y: np.ndarray) -> float:
    if y.shape[0] < 2:
        raise EstimationError("imputed stratum has fewer than two records")
    return float(np.var(y, ddof=1)) / y.shape[0]


def pi_multiple_imputation(
    records,
    spec: EstimandSpec,
    covariates: Sequence[str] = (),
    *,
    m: int = 20,
    seed: int = 0,
    propensity: PropensityModel | None = None,
) -> EstimateResult:
    """Impute other-arm stratum membership and pool with Rubin's rules.

    Each imputation draws membership-model coefficients from their
    asymptotic normal law, then membership ~ Bernoulli(predicted). The
    interval uses normal quantiles on the pooled variance.
    """
    if m < 2:
        raise ValueError("multiple imputation needs m >= 2")
    data = as_trial(records)
    _check(spec, data)
    arm, v = defining_arm(spec)
    covariates = tuple(covariates)
    direct = _direct_outcomes(data, arm, v)
    m_direct = float(np.mean(direct))
    var_direct = _component_var(direct)
    model = propensity if propensity is not None else fit_membership(data, arm, covariates)
    omask = data.z != arm
    x = data.design_for(covariates)[omask]
    x1 = np.column_stack([np.ones(x.shape[0]), x])
    y_other = data.y[omask]

    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    estimates, within, counts = [], [], []
    for _ in range(m):
        beta = rng.multivariate_normal(model.coefficients, model.covariance, method="cholesky") \
            if np.any(model.covariance) else model.coefficients.copy()
        p1 = expit(x1 @ beta)
        s_imp = (rng.random(x.shape[0]) < p1).astype(np.int8)
        members = y_other[s_imp == v]
        if members.shape[0] == 0:
            raise EstimationError("an imputation left the stratum empty on the weighted arm")
        m_imp = float(np.mean(members))
        var_imp = _component_var(members)
        m1, m0, v1, v0 = (m_direct, m_imp, var_direct, var_imp) if arm == 1 else (m_imp, m_direct, var_imp, var_direct)
        q = contrast_value(m1, m0, spec.contrast)
        if spec.contrast is Contrast.RISK_RATIO:
            u = q * q * (v1 / (m1 * m1) + v0 / (m0 * m0)) if m1 != 0 else v1 / (m0 * m0)
        else:
            u = v1 + v0
        estimates.append(q)
        within.append(u)
        counts.append(members.shape[0])

    q = np.array(estimates)
    qbar = float(np.mean(q))
    w_bar = float(np.mean(within))
    between = float(np.var(q, ddof=1))
    total = w_bar + (1.0 + 1.0 / m) * between
    half = norm.ppf(0.975) * math.sqrt(total)
    diag = {
        "imputations": m,
        "within_variance": w_bar,
        "between_variance": between,
        "total_variance": total,
        "mean_imputed_members": float(np.mean(counts)),
        "propensity_converged": bool(model.converged),
    }
    return EstimateResult(qbar, float(qbar - half), float(qbar + half), "pi_multiple_imputation", float(np.mean(counts)), diag)
