"""Sensitivity scans over unverifiable assumptions and tipping points."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import EstimandSpec, EstimateResult, Monotonicity, as_trial
from .errors import DataError, EstimationError, StratumLabError
from .estimators.bounds import BoundsResult, relaxed_proportions, trimming_bounds
from .estimators.ignorability import _check, _pi_stat, defining_arm, pi_weighting
from .resample import MAX_FAILURE_FRACTION, percentile_interval, stratified_indices

_CAUGHT = (StratumLabError, np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError)


class GridFailure(NamedTuple):
    """Marker for a grid point that produced no result."""

    reason: str
    message: str


@dataclass
class SensitivityCurve:
    """Estimates and intervals over a grid of sensitivity parameters.

    ``grid`` rows are (beta, estimate, ci_lower, ci_upper); failed points
    carry NaN and an entry in ``failures`` keyed by grid index.
    """

    grid: list
    tipping_point: float | None
    null_value: float
    method: str = "pi_weighting_tilt"
    failures: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def betas(self) -> np.ndarray:
        return np.array([g[0] for g in self.grid])

    @property
    def estimates(self) -> np.ndarray:
        return np.array([g[1] for g in self.grid])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "null_value": self.null_value,
            "tipping_point": self.tipping_point,
            "grid": [
                {"beta": b, "estimate": e, "ci_lower": lo, "ci_upper": hi} for b, e, lo, hi in self.grid
            ],
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "diagnostics": dict(self.diagnostics),
        }


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(list(grid), dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("the grid must be a nonempty sequence")
    if np.any(~np.isfinite(g)):
        raise ValueError("grid values must be finite")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid values must be strictly increasing")
    return g


def find_tipping_point(grid: Sequence, null_value: float) -> float | None:
    """First beta, in grid order, at which the interval touches ``null_value``.

    Rows whose interval is NaN are skipped. Between the last interval that
    excludes the null and the first that touches it, the crossing bound is
    interpolated linearly.
    """
    prev = None
    for b, _, lo, hi in grid:
        if math.isnan(lo) or math.isnan(hi):
            continue
        if lo <= null_value <= hi:
            if prev is None:
                return float(b)
            pb, plo, phi = prev
            bound_prev, bound_now = (plo, lo) if plo > null_value else (phi, hi)
            frac = (bound_prev - null_value) / (bound_prev - bound_now)
            return float(pb + frac * (b - pb))
        if prev is not None:
            pb, plo, phi = prev
            # interval jumped over the null between neighbours
            if (plo > null_value and hi < null_value) or (phi < null_value and lo > null_value):
                bound_prev, bound_now = (plo, lo) if plo > null_value else (phi, hi)
                frac = (bound_prev - null_value) / (bound_prev - bound_now)
                return float(pb + frac * (b - pb))
        prev = (b, lo, hi)
    return None


def tipping_scan_pi(
    records,
    spec: EstimandSpec,
    covariates: Sequence[str] = (),
    beta_grid: Sequence[float] = tuple(np.linspace(-2.0, 2.0, 41)),
    *,
    n_boot: int = 1000,
    seed: int = 0,
) -> SensitivityCurve:
    """Principal-ignorability weighting with membership tilted by outcome.

    For each beta the other-arm weights become
    ``expit(logit(e(X)) + beta * y)``, where ``y`` is the record's own
    outcome (standardized for continuous outcomes). Every grid point reuses
    the same bootstrap resamples, so beta = 0 reproduces
    :func:`~stratumlab.estimators.pi_weighting` exactly.
    """
    data = as_trial(records)
    _check(spec, data)
    arm, v = defining_arm(spec)
    covariates = tuple(covariates)
    grid = _check_grid(beta_grid)
    null = spec.contrast.null_value

    est, failures = _scan_values(data, arm, v, covariates, spec, grid)
    lo = np.full(grid.size, np.nan)
    hi = np.full(grid.size, np.nan)
    diag: dict = {}
    if n_boot:
        if n_boot < 100:
            raise ValueError("bootstrap needs B >= 100")
        idx = stratified_indices(data.z, n_boot, seed)
        reps = np.full((n_boot, grid.size), np.nan)
        for b in range(n_boot):
            try:
                reps[b] = _scan_values(data.take(idx[b]), arm, v, covariates, spec, grid)[0]
            except _CAUGHT:
                pass
        n_failed = np.isnan(reps).sum(axis=0)
        for j in range(grid.size):
            if j in failures:
                continue
            if n_failed[j] > MAX_FAILURE_FRACTION * n_boot:
                failures[j] = f"bootstrap unstable for this statistic ({int(n_failed[j])}/{n_boot} resamples failed)"
                continue
            col = reps[:, j]
            lo[j], hi[j] = percentile_interval(col[~np.isnan(col)])
        diag = {"bootstrap_B": n_boot, "bootstrap_failures": [int(k) for k in n_failed]}
    rows = [(float(b), float(e), float(l_), float(h)) for b, e, l_, h in zip(grid, est, lo, hi)]
    tp = find_tipping_point([r for j, r in enumerate(rows) if j not in failures], null) if n_boot else None
    return SensitivityCurve(rows, tp, null, "pi_weighting_tilt", failures, diag)


def _scan_values(data, arm, v, covariates, spec, grid):
    """Estimates over the grid plus per-point failure messages.

    Errors in the membership fit or the direct arm fail every point and
    propagate; a tilted contrast that cannot be formed is NaN at that point.
    """
    values = _pi_stat(data, arm, v, covariates, spec.contrast, tilts=list(grid))[0]
    failures = {int(j): "estimate not defined at this point" for j in np.flatnonzero(~np.isfinite(values))}
    return values, failures


def monotonicity_relaxation(
    records,
    spec: EstimandSpec,
    defier_proportions: Sequence[float],
    *,
    monotonicity: Monotonicity | str,
    outcome_range: tuple[float, float] | None = None,
    n_boot: int = 1000,
    seed: int = 0,
) -> list:
    """Trimming bounds with the excluded cell pinned at each grid share.

    Returns ``[(defier_share, BoundsResult | GridFailure), ...]`` in grid
    order. Shares whose implied proportions go negative are marked
    infeasible; if every share is infeasible an error is raised.
    """
    data = as_trial(records)
    direction = Monotonicity(monotonicity)
    grid = _check_grid(defier_proportions)
    if np.any(grid < 0):
        raise ValueError("defier shares must be nonnegative")
    out = []
    for d in grid:
        d = float(d)
        try:
            relaxed_proportions(data, direction, d)
        except EstimationError as exc:
            out.append((d, GridFailure("infeasible", str(exc))))
            continue
        try:
            res = trimming_bounds(
                data, spec, monotonicity=direction, outcome_range=outcome_range,
                n_boot=n_boot, seed=seed, defier=d,
            )
            out.append((d, res))
        except _CAUGHT as exc:
            out.append((d, GridFailure("failed", str(exc))))
    if all(isinstance(r, GridFailure) and r.reason == "infeasible" for _, r in out):
        raise EstimationError("every defier share on the grid is infeasible")
    return out


def _set_label(names: Sequence[str]) -> str:
    return "+".join(names) if names else "(intercept only)"


def covariate_set_scan(
    records,
    spec: EstimandSpec,
    covariate_sets: Sequence[Sequence[str]],
    *,
    n_boot: int = 1000,
    seed: int = 0,
) -> list:
    """Principal-ignorability weighting for each covariate set.

    The intercept-only set is always included. All sets share ``seed``, so
    repeated sets give identical results. Returns ``[(label, EstimateResult
    | GridFailure), ...]`` sorted by label.
    """
    data = as_trial(records)
    sets = [tuple(s) for s in covariate_sets]
    if not sets:
        raise ValueError("give at least one covariate set")
    known = set(data.schema.names)
    for s in sets:
        unknown = [c for c in s if c not in known]
        if unknown:
            raise DataError(f"unknown covariates {unknown}; available: {sorted(known)}")
    if () not in sets:
        sets.append(())
    out = []
    for s in sets:
        try:
            res = pi_weighting(data, spec, s, n_boot=n_boot, seed=seed)
        except _CAUGHT as exc:
            res = GridFailure("failed", str(exc))
        out.append((_set_label(s), res))
    out.sort(key=lambda t: t[0])
    return out


__all__ = [
    "BoundsResult",
    "EstimateResult",
    "GridFailure",
    "SensitivityCurve",
    "covariate_set_scan",
    "find_tipping_point",
    "monotonicity_relaxation",
    "tipping_scan_pi",
]
