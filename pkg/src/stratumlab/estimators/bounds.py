"""Trimming bounds for stratum contrasts.

For each arm the target stratum occupies a known fraction of some observed
group (records of that arm with a given S, or the whole arm). The outcome
mean of the target within that group lies between the mean of its
ceil(f * m) smallest and ceil(f * m) largest outcomes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    CELLS,
    PROPORTION_TOL,
    Contrast,
    EstimandSpec,
    Monotonicity,
    OutcomeKind,
    TrialData,
    arm_rates,
    as_trial,
    proportions_with_defiers,
    stratum_proportions_monotone,
)
from ..errors import EstimationError
from ..resample import bootstrap_ci

FRACTION_TOL = 1e-9


@dataclass
class BoundsResult:
    lower: float
    upper: float
    ci_lower_outer: float
    ci_upper_outer: float
    method: str
    components: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "ci_lower_outer": self.ci_lower_outer,
            "ci_upper_outer": self.ci_upper_outer,
            "method": self.method,
            "components": {k: list(v) for k, v in self.components.items()},
            "diagnostics": dict(self.diagnostics),
        }


def trimmed_mean_bounds(y: np.ndarray, fraction: float) -> tuple[float, float]:
    """Smallest and largest possible mean of a ``fraction`` share of ``y``.

    ``y`` must already be in tie-breaking order (outcome, then id); the
    stable sort keeps ids ordered within ties.
    """
    m = y.shape[0]
    if fraction >= 1.0 - FRACTION_TOL:
        mu = float(np.mean(y))
        return mu, mu
    k = max(1, math.ceil(fraction * m - FRACTION_TOL))
    ys = y[np.argsort(y, kind="stable")]
    return float(np.mean(ys[:k])), float(np.mean(ys[m - k:]))


def _arm_groups(stratum, arm: int, props: dict | None, data: TrialData) -> list:
    """Observed groups holding the target on ``arm``.

    Returns (status or None for the whole arm, target mass, fraction of the
    group that belongs to the target) per group.
    """
    if props is None:
        d = stratum.defining_arm()
        if d is None:
            raise EstimationError(
                f"bounds for stratum {stratum.label()} need stratum proportions: declare monotonicity"
            )
        a, v = d
        if arm == a:
            return [(v, 1.0, 1.0)]
        p0, p1 = arm_rates(data)
        q = p1 if a == 1 else p0
        q = q if v == 1 else 1.0 - q
        return [(None, q, q)]
    groups = []
    for v in (1, 0):
        mass = 0.0
        for c in CELLS:
            if c in stratum and c.s(arm) == v:
                mass += props[c]
        if mass <= FRACTION_TOL:
            continue
        denom = sum(props[c] for c in CELLS if c.s(arm) == v)
        groups.append((v, mass, min(mass / denom, 1.0)))
    return groups


def _effective_stratum(spec: EstimandSpec, direction: Monotonicity | None):
    members = set(spec.stratum.members)
    if direction is not None:
        members.discard(direction.excluded)
    if not members:
        raise EstimationError("target stratum is excluded by the declared monotonicity")
    return type(spec.stratum)(frozenset(members))


def relaxed_proportions(data: TrialData, direction: Monotonicity, defier: float) -> dict:
    """Stratum proportions with the excluded cell pinned at ``defier``."""
    p0, p1 = arm_rates(data)
    props = proportions_with_defiers(p0, p1, direction, defier)
    low = min(props.values())
    if low < -PROPORTION_TOL:
        raise EstimationError(f"infeasible stratum proportions at defier share {defier:g}")
    return {c: max(p, 0.0) for c, p in props.items()}


def _bounds_stat(data: TrialData, spec, direction, defier):
    if np.isnan(data.s).any():
        raise EstimationError("intercurrent status missing; apply a landmark first")
    props = None
    if defier is not None:
        stratum = spec.stratum
        props = relaxed_proportions(data, direction, defier)
    else:
        stratum = _effective_stratum(spec, direction)
        if direction is not None:
            props = stratum_proportions_monotone(data, direction)
    comps = {}
    fractions = {}
    for arm, name in ((1, "treated"), (0, "control")):
        groups = _arm_groups(stratum, arm, props, data)
        if not groups or groups[0][2] <= FRACTION_TOL:
            raise EstimationError(f"stratum empty on {name} arm")
        parts = []
        for status, mass, frac in groups:
            mask = data.z == arm
            if status is not None:
                mask = mask & (data.s == status)
            y = data.y[mask]
            if y.shape[0] == 0:
                raise EstimationError(f"stratum empty on {name} arm")
            parts.append((mass, trimmed_mean_bounds(y, frac)))
            fractions[f"{name}" + ("" if status is None else f"|s={status}")] = frac
        if len(parts) == 1:
            comps[name] = parts[0][1]
        else:
            total = sum(m for m, _ in parts)
            comps[name] = (
                sum(m * b[0] for m, b in parts) / total,
                sum(m * b[1] for m, b in parts) / total,
            )
    (l1, u1), (l0, u0) = comps["treated"], comps["control"]
    if spec.contrast is Contrast.RISK_RATIO:
        if u0 <= 0:
            raise EstimationError("undefined ratio: control upper bound is zero")
        # a zero control lower bound leaves the ratio unbounded above
        lo, hi = l1 / u0, (u1 / l0 if l0 > 0 else math.inf)
    else:
        lo, hi = l1 - u0, u1 - l0
    return lo, hi, comps, fractions, props


def _validate(data: TrialData, spec: EstimandSpec, outcome_range):
    spec.check_outcome(data.kind)
    if spec.contrast.is_survival:
        raise EstimationError("trimming bounds are implemented for binary and continuous outcomes")
    if data.kind is OutcomeKind.CONTINUOUS:
        if outcome_range is None:
            raise EstimationError("continuous outcome needs a declared outcome range [a, b] for bounds")
        a, b = outcome_range
        if np.any(data.y < a) or np.any(data.y > b):
            raise EstimationError(f"outcomes fall outside the declared range [{a}, {b}]")


def trimming_bounds(
    records,
    spec: EstimandSpec,
    *,
    monotonicity: Monotonicity | str | None = None,
    outcome_range: tuple[float, float] | None = None,
    n_boot: int = 1000,
    seed: int = 0,
    defier: float | None = None,
) -> BoundsResult:
    """Sharp-in-large-samples bounds on the stratum contrast.

    Strata ``{S(z)=v}`` need no further assumption: the other arm is a
    mixture with known target share. Single cells and other unions need
    ``monotonicity``, which identifies the stratum proportions; the target
    is then split by its status on each arm and each observed group is
    trimmed separately. A fixed ``defier`` share pins the excluded cell at
    that mass instead of emptying it.
    """
    data = as_trial(records)
    _validate(data, spec, outcome_range)
    direction = None if monotonicity is None else Monotonicity(monotonicity)
    if defier is not None and direction is None:
        raise ValueError("a defier share needs a monotonicity direction")
    lo, hi, comps, fractions, props = _bounds_stat(data, spec, direction, defier)
    ci_lo = ci_hi = math.nan
    diag = {"fractions": fractions}
    if props is not None:
        diag["proportions"] = {c.code: float(props[c]) for c in CELLS}
    if n_boot:
        ci = bootstrap_ci(
            lambda d: np.array(_bounds_stat(d, spec, direction, defier)[:2]),
            data,
            B=n_boot,
            seed=seed,
        )
        ci_lo, ci_hi = float(ci.lower[0]), float(ci.upper[1])
        diag["bootstrap_B"] = n_boot
        diag["bootstrap_failures"] = ci.n_failed
    return BoundsResult(lo, hi, ci_lo, ci_hi, "trimming_bounds", comps, diag)
