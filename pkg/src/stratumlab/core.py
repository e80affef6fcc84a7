"""Domain types, principal-stratum algebra and the assumption-free ITT estimator.

Principal strata are indexed by the pair of potential intercurrent-event
statuses ``(S(0), S(1))``. The canonical cell order used for proportion
vectors throughout the package is::

    BOTH (1,1), CONTROL_ONLY (1,0), NEITHER (0,0), TEST_ONLY (0,1)

so that under ``S(0) >= S(1)`` the excluded cell is last.
"""
from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, EstimationError, MonotonicityViolation
from .resample import bootstrap_ci

PROPORTION_TOL = 1e-12


class Arm(IntEnum):
    CONTROL = 0
    TEST = 1

    @classmethod
    def coerce(cls, value: Any) -> "Arm":
        if isinstance(value, bool) or value not in (0, 1):
            raise DataError(f"arm must be 0 or 1, got {value!r}")
        return cls(int(value))


class PrincipalStratum(Enum):
    """One cell of the 2x2 table of potential statuses, valued ``(s0, s1)``."""

    BOTH = (1, 1)
    CONTROL_ONLY = (1, 0)
    NEITHER = (0, 0)
    TEST_ONLY = (0, 1)

    @property
    def s0(self) -> int:
        return self.value[0]

    @property
    def s1(self) -> int:
        return self.value[1]

    def s(self, arm: int) -> int:
        return self.value[int(arm)]

    @property
    def code(self) -> str:
        """Two-character key ``"<s0><s1>"`` used in config files."""
        return f"{self.s0}{self.s1}"

    @classmethod
    def from_code(cls, code: str) -> "PrincipalStratum":
        code = str(code).strip()
        for cell in cls:
            if code in (cell.code, cell.name, cell.name.lower()):
                return cell
        raise ValueError(f"unknown principal stratum {code!r}")

    def __str__(self) -> str:
        return f"{{S(0)={self.s0}}}∩{{S(1)={self.s1}}}"


CELLS: tuple[PrincipalStratum, ...] = tuple(PrincipalStratum)


def classify_stratum(s0: int, s1: int) -> PrincipalStratum:
    """Table cell containing the pair ``(s0, s1)``."""
    if s0 not in (0, 1) or s1 not in (0, 1):
        raise DataError(f"potential statuses must be binary, got ({s0!r}, {s1!r})")
    return PrincipalStratum((int(s0), int(s1)))


@dataclass(frozen=True)
class StratumSet:
    """Nonempty union of principal strata."""

    members: frozenset

    def __post_init__(self):
        members = frozenset(self.members)
        if not members:
            raise ValueError("StratumSet must be nonempty")
        if not all(isinstance(m, PrincipalStratum) for m in members):
            raise TypeError("StratumSet members must be PrincipalStratum cells")
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, *cells: PrincipalStratum) -> "StratumSet":
        return cls(frozenset(cells))

    @classmethod
    def cell(cls, s0: int, s1: int) -> "StratumSet":
        return cls.of(classify_stratum(s0, s1))

    @classmethod
    def where(cls, *, s0: int | None = None, s1: int | None = None) -> "StratumSet":
        cells = [c for c in CELLS if (s0 is None or c.s0 == s0) and (s1 is None or c.s1 == s1)]
        return cls(frozenset(cells))

    @classmethod
    def all(cls) -> "StratumSet":
        return cls(frozenset(CELLS))

    @classmethod
    def parse(cls, text: str) -> "StratumSet":
        """Parse ``"all"``, ``"S1=1"``, ``"S0=1,S1=1"`` or ``"11|10"``."""
        text = str(text).strip()
        if text.lower() == "all":
            return cls.all()
        if "=" not in text:
            return cls(frozenset(PrincipalStratum.from_code(p) for p in text.split("|")))
        kw: dict[str, int] = {}
        for part in text.replace("&", ",").split(","):
            key, _, val = part.partition("=")
            key = key.strip().upper().replace("(", "").replace(")", "")
            if key not in ("S0", "S1") or val.strip() not in ("0", "1"):
                raise ValueError(f"cannot parse stratum {text!r}")
            kw[key.lower()] = int(val)
        return cls.where(**kw)

    def __contains__(self, cell) -> bool:
        return cell in self.members

    def __iter__(self):
        return (c for c in CELLS if c in self.members)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def is_full(self) -> bool:
        return len(self.members) == 4

    def defining_arm(self) -> tuple[int, int] | None:
        """``(arm, value)`` when the set is exactly ``{S(arm)=value}``."""
        for arm in (1, 0):
            for v in (0, 1):
                if self.members == StratumSet.where(**{f"s{arm}": v}).members:
                    return arm, v
        return None

    def common_status(self, arm: int) -> int | None:
        """The S(arm) value shared by every member, if any."""
        vals = {c.s(arm) for c in self.members}
        return vals.pop() if len(vals) == 1 else None

    def label(self) -> str:
        if self.is_full:
            return "all"
        d = self.defining_arm()
        if d is not None:
            return f"S{d[0]}={d[1]}"
        if len(self.members) == 1:
            (c,) = self.members
            return f"S0={c.s0},S1={c.s1}"
        return "|".join(c.code for c in self)

    def __str__(self) -> str:
        return self.label()


class OutcomeKind(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"
    TIME_TO_EVENT = "time_to_event"


@dataclass(frozen=True)
class Outcome:
    """Observed or potential outcome. For time-to-event ``value`` is the time."""

    kind: OutcomeKind
    value: float
    event: int | None = None

    def __post_init__(self):
        kind = OutcomeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is OutcomeKind.BINARY and self.value not in (0, 1):
            raise DataError(f"binary outcome must be 0 or 1, got {self.value!r}")
        if kind is OutcomeKind.TIME_TO_EVENT:
            if not self.value >= 0:
                raise DataError(f"event time must be nonnegative, got {self.value!r}")
            if self.event not in (0, 1):
                raise DataError(f"event indicator must be 0 or 1, got {self.event!r}")
        elif self.event is not None:
            raise DataError("event indicator only applies to time-to-event outcomes")

    @classmethod
    def binary(cls, value: int) -> "Outcome":
        return cls(OutcomeKind.BINARY, value)

    @classmethod
    def continuous(cls, value: float) -> "Outcome":
        return cls(OutcomeKind.CONTINUOUS, float(value))

    @classmethod
    def time_to_event(cls, time: float, event: int) -> "Outcome":
        return cls(OutcomeKind.TIME_TO_EVENT, float(time), int(event))

    @property
    def time(self) -> float:
        return self.value


Covariates = tuple  # tuple of (name, value) pairs


def _as_covariates(x) -> tuple:
    if isinstance(x, Mapping):
        x = tuple(x.items())
    x = tuple((str(k), v) for k, v in x)
    names = [k for k, _ in x]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate covariate names in {names}")
    return x


@dataclass(frozen=True)
class ObservedRecord:
    id: str
    z: int
    s: int | None
    y: Outcome
    x: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "z", Arm.coerce(self.z))
        if self.s is not None and self.s not in (0, 1):
            raise DataError(f"record {self.id}: s must be 0, 1 or absent, got {self.s!r}")
        object.__setattr__(self, "x", _as_covariates(self.x))


@dataclass(frozen=True)
class PotentialRecord:
    """Full potential-outcome vector; only the simulator can produce these.

    ``true_times`` carries the uncensored event times ``(T(0), T(1))`` for
    time-to-event outcomes.
    """

    id: str
    s0: int
    s1: int
    y0: Outcome
    y1: Outcome
    x: tuple = ()
    true_times: tuple[float, float] | None = None

    def __post_init__(self):
        classify_stratum(self.s0, self.s1)
        if self.y0.kind != self.y1.kind:
            raise DataError(f"record {self.id}: y0 and y1 outcome kinds differ")
        object.__setattr__(self, "x", _as_covariates(self.x))

    @property
    def stratum(self) -> PrincipalStratum:
        return classify_stratum(self.s0, self.s1)


class Contrast(str, Enum):
    RISK_DIFFERENCE = "risk_difference"
    RISK_RATIO = "risk_ratio"
    MEAN_DIFFERENCE = "mean_difference"
    SURVIVAL_DIFFERENCE = "survival_difference_at"
    RMST_DIFFERENCE = "rmst_difference"

    @property
    def is_survival(self) -> bool:
        return self in (Contrast.SURVIVAL_DIFFERENCE, Contrast.RMST_DIFFERENCE)

    @property
    def is_ratio(self) -> bool:
        return self is Contrast.RISK_RATIO

    @property
    def null_value(self) -> float:
        return 1.0 if self.is_ratio else 0.0


@dataclass(frozen=True)
class EstimandSpec:
    stratum: StratumSet
    contrast: Contrast
    t_star: float | None = None
    landmark: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "contrast", Contrast(self.contrast))
        if isinstance(self.stratum, str):
            object.__setattr__(self, "stratum", StratumSet.parse(self.stratum))
        if self.contrast.is_survival:
            if self.t_star is None or not self.t_star > 0:
                raise ValueError(f"{self.contrast.value} needs a positive t_star")
        elif self.t_star is not None:
            raise ValueError("t_star only applies to survival contrasts")
        if self.landmark is not None:
            if not self.contrast.is_survival:
                raise ValueError("landmark only applies to time-to-event contrasts")
            if not self.landmark >= 0:
                raise ValueError("landmark must be nonnegative")
            if not self.t_star > self.landmark:
                raise ValueError("t_star must exceed the landmark time")

    def check_outcome(self, kind: OutcomeKind) -> None:
        kind = OutcomeKind(kind)
        c = self.contrast
        if c in (Contrast.RISK_DIFFERENCE, Contrast.RISK_RATIO) and kind is not OutcomeKind.BINARY:
            raise EstimationError(f"{c.value} requires a binary outcome, got {kind.value}")
        if c is Contrast.MEAN_DIFFERENCE and kind is OutcomeKind.TIME_TO_EVENT:
            raise EstimationError("mean_difference is not defined for censored outcomes")
        if c.is_survival and kind is not OutcomeKind.TIME_TO_EVENT:
            raise EstimationError(f"{c.value} requires a time-to-event outcome")

    def to_dict(self) -> dict:
        return {
            "stratum": self.stratum.label(),
            "contrast": self.contrast.value,
            "t_star": self.t_star,
            "landmark": self.landmark,
        }


@dataclass
class EstimateResult:
    estimate: float
    ci_lower: float
    ci_upper: float
    method: str
    n_effective: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "method": self.method,
            "n_effective": self.n_effective,
            "diagnostics": dict(self.diagnostics),
        }


class Monotonicity(str, Enum):
    S0_GE_S1 = "S0_ge_S1"
    S1_GE_S0 = "S1_ge_S0"

    @property
    def excluded(self) -> PrincipalStratum:
        return PrincipalStratum.TEST_ONLY if self is Monotonicity.S0_GE_S1 else PrincipalStratum.CONTROL_ONLY


# ----------------------------------------------------------------------------
# Array container
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateInfo:
    name: str
    kind: str  # "continuous" or "categorical"
    levels: tuple = ()

    @property
    def columns(self) -> tuple[str, ...]:
        if self.kind == "continuous":
            return (self.name,)
        return tuple(f"{self.name}[{lv}]" for lv in self.levels[1:])


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[CovariateInfo, ...] = ()

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(col for c in self.covariates for col in c.columns)

    def __getitem__(self, name: str) -> CovariateInfo:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    def column_slice(self, name: str) -> slice:
        start = 0
        for c in self.covariates:
            width = len(c.columns)
            if c.name == name:
                return slice(start, start + width)
            start += width
        raise DataError(f"unknown covariate {name!r}; available: {list(self.names)}")

    @classmethod
    def infer(cls, raw: Mapping[str, Sequence]) -> "CovariateSchema":
        infos = []
        for name, values in raw.items():
            if all(isinstance(v, numbers.Real) and not isinstance(v, bool) for v in values):
                infos.append(CovariateInfo(name, "continuous"))
            else:
                infos.append(CovariateInfo(name, "categorical", tuple(sorted({str(v) for v in values}))))
        return cls(tuple(infos))

    def encode(self, raw: Mapping[str, Sequence], n: int) -> np.ndarray:
        """Reference-coded design matrix (no intercept)."""
        cols = []
        for c in self.covariates:
            vals = raw[c.name]
            if c.kind == "continuous":
                cols.append(np.asarray(vals, dtype=np.float64))
            else:
                sv = np.asarray([str(v) for v in vals], dtype=object)
                for lv in c.levels[1:]:
                    cols.append((sv == lv).astype(np.float64))
        if not cols:
            return np.empty((n, 0))
        return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class TrialData:
    """Column-oriented view of a list of observed records, sorted by id.

    ``s`` is float with NaN marking an absent intercurrent status. For
    time-to-event outcomes ``y`` holds the observed time and ``event`` the
    indicator. ``design`` is the full reference-coded covariate matrix.
    """

    ids: np.ndarray
    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    event: np.ndarray | None
    kind: OutcomeKind
    schema: CovariateSchema
    raw: dict
    design: np.ndarray
    landmark: float | None = None

    @property
    def n(self) -> int:
        return int(self.z.shape[0])

    def __len__(self) -> int:
        return self.n

    @classmethod
    def from_records(cls, records: Iterable[ObservedRecord]) -> "TrialData":
        records = sorted(records, key=lambda r: r.id)
        if not records:
            raise DataError("no records")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DataError(f"duplicate id {dup!r}")
        kinds = {r.y.kind for r in records}
        if len(kinds) != 1:
            raise DataError(f"mixed outcome kinds {sorted(k.value for k in kinds)}")
        kind = kinds.pop()
        names = [k for k, _ in records[0].x]
        raw: dict[str, list] = {k: [] for k in names}
        for r in records:
            if [k for k, _ in r.x] != names:
                raise DataError(f"record {r.id}: covariate schema differs from {names}")
            for k, v in r.x:
                if v is None or (isinstance(v, float) and math.isnan(v)) or v == "":
                    raise DataError(f"record {r.id}: missing value for covariate {k!r}")
                raw[k].append(v)
        schema = CovariateSchema.infer(raw)
        n = len(records)
        z = np.fromiter((int(r.z) for r in records), dtype=np.int8, count=n)
        s = np.fromiter((np.nan if r.s is None else float(r.s) for r in records), dtype=np.float64, count=n)
        y = np.fromiter((float(r.y.value) for r in records), dtype=np.float64, count=n)
        event = None
        if kind is OutcomeKind.TIME_TO_EVENT:
            event = np.fromiter((r.y.event for r in records), dtype=np.float64, count=n)
        raw_arr = {k: _raw_array(v, schema[k].kind) for k, v in raw.items()}
        return cls(
            ids=np.asarray(ids, dtype=object),
            z=z,
            s=s,
            y=y,
            event=event,
            kind=kind,
            schema=schema,
            raw=raw_arr,
            design=schema.encode(raw_arr, n),
        )

    @classmethod
    def from_arrays(
        cls,
        ids,
        z,
        s,
        y,
        kind,
        covariates: Mapping[str, Sequence] | None = None,
        event=None,
    ) -> "TrialData":
        """Build directly from columns (ids must already be unique)."""
        ids = np.asarray(ids, dtype=object)
        order = np.argsort(ids, kind="stable")
        covariates = dict(covariates or {})
        raw = {k: np.asarray(v, dtype=object if not _is_numeric(v) else np.float64)[order] for k, v in covariates.items()}
        schema = CovariateSchema.infer({k: list(v) for k, v in raw.items()}) if raw else CovariateSchema()
        raw = {k: _raw_array(list(v), schema[k].kind) for k, v in raw.items()}
        n = ids.shape[0]
        return cls(
            ids=ids[order],
            z=np.asarray(z, dtype=np.int8)[order],
            s=np.asarray(s, dtype=np.float64)[order],
            y=np.asarray(y, dtype=np.float64)[order],
            event=None if event is None else np.asarray(event, dtype=np.float64)[order],
            kind=OutcomeKind(kind),
            schema=schema,
            raw=raw,
            design=schema.encode(raw, n),
        )

    def take(self, idx) -> "TrialData":
        return TrialData(
            ids=self.ids[idx],
            z=self.z[idx],
            s=self.s[idx],
            y=self.y[idx],
            event=None if self.event is None else self.event[idx],
            kind=self.kind,
            schema=self.schema,
            raw={k: v[idx] for k, v in self.raw.items()},
            design=self.design[idx],
            landmark=self.landmark,
        )

    def with_landmark(self, landmark: float | None) -> "TrialData":
        return TrialData(**{**self.__dict__, "landmark": landmark})

    def design_for(self, covariates: Sequence[str]) -> np.ndarray:
        if not covariates:
            return np.empty((self.n, 0))
        return np.column_stack([self.design[:, self.schema.column_slice(c)] for c in covariates])

    def columns_for(self, covariates: Sequence[str]) -> tuple[str, ...]:
        return tuple(col for c in covariates for col in self.schema[c].columns)

    def arm(self, z: int) -> np.ndarray:
        return self.z == z

    def to_records(self) -> list[ObservedRecord]:
        out = []
        names = self.schema.names
        for i in range(self.n):
            if self.kind is OutcomeKind.TIME_TO_EVENT:
                y = Outcome.time_to_event(self.y[i], int(self.event[i]))
            elif self.kind is OutcomeKind.BINARY:
                y = Outcome.binary(int(self.y[i]))
            else:
                y = Outcome.continuous(self.y[i])
            x = tuple((k, _py(self.raw[k][i])) for k in names)
            s = None if np.isnan(self.s[i]) else int(self.s[i])
            out.append(ObservedRecord(str(self.ids[i]), int(self.z[i]), s, y, x))
        return out


def _is_numeric(values) -> bool:
    return all(isinstance(v, numbers.Real) and not isinstance(v, bool) for v in values)


def _raw_array(values, kind: str) -> np.ndarray:
    if kind == "continuous":
        return np.asarray(values, dtype=np.float64)
    return np.asarray([str(v) for v in values], dtype=object)


def _py(v):
    return float(v) if isinstance(v, (np.floating, float)) else str(v)


def as_trial(data) -> TrialData:
    if isinstance(data, TrialData):
        return data
    out = TrialData.from_records(data)
    landmark = getattr(data, "landmark", None)
    return out if landmark is None else out.with_landmark(landmark)


# ----------------------------------------------------------------------------
# Contrasts
# ----------------------------------------------------------------------------


def weighted_mean(y: np.ndarray, w: np.ndarray | None = None) -> float:
    """Weighted mean; weights are scaled by their maximum first so equal
    weights reproduce ``np.mean`` exactly."""
    if w is None:
        return float(np.mean(y))
    wmax = w.max()
    if not wmax > 0:
        raise EstimationError("all weights are zero")
    w = w / wmax
    return float(np.sum(w * y) / np.sum(w))


def ess(w: np.ndarray) -> float:
    """Effective sample size (sum w)^2 / sum w^2; exact for equal weights."""
    wmax = float(np.max(w)) if w.size else 0.0
    if not wmax > 0:
        return 0.0
    w = w / wmax
    sw = float(np.sum(w))
    sw2 = float(np.sum(w * w))
    return sw * sw / sw2 if sw2 > 0 else 0.0


def contrast_value(m1: float, m0: float, contrast: Contrast) -> float:
    if contrast is Contrast.RISK_RATIO:
        if m0 == 0:
            raise EstimationError("undefined ratio: control mean is zero")
        return m1 / m0
    return m1 - m0


def summarize_ci(stat, data: TrialData, n_boot: int, seed: int) -> tuple[float, float, dict]:
    if not n_boot:
        return math.nan, math.nan, {}
    ci = bootstrap_ci(stat, data, B=n_boot, seed=seed)
    return ci.lower, ci.upper, {"bootstrap_B": n_boot, "bootstrap_failures": ci.n_failed}


def itt_effect(records, contrast: Contrast | str, *, n_boot: int = 1000, seed: int = 0) -> EstimateResult:
    """Difference (or ratio) of arm means over the whole randomized population."""
    data = as_trial(records)
    contrast = Contrast(contrast)
    if data.landmark is not None:
        raise EstimationError("itt_effect does not accept landmarked data")
    EstimandSpec(StratumSet.all(), contrast, t_star=1.0 if contrast.is_survival else None).check_outcome(data.kind)
    if contrast.is_survival:
        raise EstimationError("use survival.stratum_survival_contrast for time-to-event contrasts")

    def stat(d: TrialData) -> float:
        t, c = d.z == 1, d.z == 0
        if not t.any() or not c.any():
            raise EstimationError("arm has no records")
        return contrast_value(float(np.mean(d.y[t])), float(np.mean(d.y[c])), contrast)

    est = stat(data)
    lo, hi, diag = summarize_ci(stat, data, n_boot, seed)
    return EstimateResult(est, lo, hi, "itt", float(data.n), diag)


# ----------------------------------------------------------------------------
# Stratum proportions under monotonicity
# ----------------------------------------------------------------------------


def arm_rates(data: TrialData) -> tuple[float, float]:
    """(P(S=1|Z=0), P(S=1|Z=1)) among records with observed status."""
    out = []
    for z in (0, 1):
        m = data.z == z
        if not m.any():
            raise EstimationError("arm has no records")
        s = data.s[m]
        if np.isnan(s).any():
            raise EstimationError("intercurrent status missing; apply a landmark first")
        out.append(float(np.mean(s)))
    return out[0], out[1]


def proportions_with_defiers(p0: float, p1: float, direction: Monotonicity, defier: float = 0.0) -> dict:
    """Stratum proportions implied by arm-wise S rates with the excluded
    cell pinned at ``defier``. Entries may be negative when infeasible."""
    direction = Monotonicity(direction)
    P = PrincipalStratum
    if direction is Monotonicity.S0_GE_S1:
        both = p1 - defier
        return {P.BOTH: both, P.CONTROL_ONLY: p0 - both, P.NEITHER: 1.0 - p0 - defier, P.TEST_ONLY: defier}
    both = p0 - defier
    return {P.BOTH: both, P.CONTROL_ONLY: defier, P.NEITHER: 1.0 - p1 - defier, P.TEST_ONLY: p1 - both}


def stratum_proportions_monotone(records, direction: Monotonicity | str) -> dict:
    """Principal-stratum proportions identified by monotonicity."""
    data = as_trial(records)
    direction = Monotonicity(direction)
    p0, p1 = arm_rates(data)
    props = proportions_with_defiers(p0, p1, direction, 0.0)
    mover = PrincipalStratum.CONTROL_ONLY if direction is Monotonicity.S0_GE_S1 else PrincipalStratum.TEST_ONLY
    if props[mover] < -PROPORTION_TOL:
        raise MonotonicityViolation("monotonicity contradicted by data", props[mover])
    if props[mover] < 0:
        props[mover] = 0.0
    return props
