"""Synthetic trials with full potential outcomes and oracle stratum effects.

Randomness comes from a counter-based SplitMix64 stream: subject ``i``
draws its uniforms from a substream keyed by (seed, i), so growing ``n``
never changes earlier subjects. Uniform slots per subject:

    0        principal stratum
    1        outcome (shared by both arms: common random numbers)
    2        censoring time
    8 + k    covariate k

Arm assignment uses a separate stream keyed by (seed, "arm").
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, logit, ndtri

from ._kernels import mix64, uniform_block
from .core import (
    CELLS,
    Contrast,
    CovariateInfo,
    CovariateSchema,
    EstimandSpec,
    ObservedRecord,
    Outcome,
    OutcomeKind,
    PotentialRecord,
    TrialData,
    contrast_value,
)
from .errors import ConfigError, EstimationError

FAMILIES = {"bernoulli": OutcomeKind.BINARY, "normal": OutcomeKind.CONTINUOUS, "exponential": OutcomeKind.TIME_TO_EVENT}
COVARIATE_SLOT = 8
_ARM_STREAM = 0xA5A5_0001
_SUBJECT_STREAM = 0x5EED_0001


def _stream_key(seed: int, stream: int) -> int:
    return mix64(mix64(int(seed) & ((1 << 64) - 1)) ^ stream)


@dataclass(frozen=True)
class CovariateGenerator:
    """Categorical (levels with probabilities) or continuous (loc + scale * N(0,1))."""

    name: str
    kind: str = "continuous"
    levels: tuple = ()
    probs: tuple = ()
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind == "categorical":
            if len(self.levels) < 2 or len(self.levels) != len(self.probs):
                raise ConfigError(f"covariate {self.name}: need >= 2 levels with one probability each")
            if len(set(map(str, self.levels))) != len(self.levels):
                raise ConfigError(f"covariate {self.name}: duplicate levels")
            if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
                raise ConfigError(f"covariate {self.name}: level probabilities must be >= 0 and sum to 1")
        elif self.kind == "continuous":
            if not self.scale > 0:
                raise ConfigError(f"covariate {self.name}: scale must be > 0")
        else:
            raise ConfigError(f"covariate {self.name}: kind must be 'categorical' or 'continuous'")

    @property
    def info(self) -> CovariateInfo:
        if self.kind == "continuous":
            return CovariateInfo(self.name, "continuous")
        return CovariateInfo(self.name, "categorical", tuple(sorted(str(v) for v in self.levels)))

    def draw(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "continuous":
            return self.loc + self.scale * ndtri(u)
        edges = np.cumsum(self.probs)
        edges[-1] = 1.0
        idx = np.searchsorted(edges, u, side="right")
        return np.asarray([str(v) for v in self.levels], dtype=object)[np.minimum(idx, len(self.levels) - 1)]


@dataclass(frozen=True)
class OutcomeLaw:
    """Outcome distribution for one (stratum, arm).

    ``param`` is p (bernoulli), the mean (normal) or the rate (exponential);
    ``sigma`` is the normal sd. ``coef`` maps design columns to effects on
    the link scale: logit p, the mean, or log rate.
    """

    param: float
    sigma: float = 1.0
    coef: tuple = ()

    def coef_dict(self) -> dict:
        return dict(self.coef)


@dataclass(frozen=True)
class SimConfig:
    """Data-generating process for one synthetic trial.

    Either ``proportions`` (fixed cell probabilities keyed by cell code) or
    ``stratum_coefficients`` (multinomial logit over design columns, keyed
    by cell code, reference cell "00"; unlisted cells get probability 0)
    drives membership. ``outcomes`` maps (cell code, arm) to an
    :class:`OutcomeLaw`.
    """

    n: int
    family: str
    outcomes: Mapping
    proportions: Mapping | None = None
    stratum_coefficients: Mapping | None = None
    covariates: tuple = ()
    censoring_rate: float = 0.0
    t_max: float | None = None
    pi_violation_beta: float = 0.0
    seed: int = 0
    p_treat: float = 0.5

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ConfigError("n must be a nonnegative integer")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {sorted(FAMILIES)}")
        if (self.proportions is None) == (self.stratum_coefficients is None):
            raise ConfigError("give exactly one of proportions or stratum_coefficients")
        if not 0.0 < self.p_treat < 1.0:
            raise ConfigError("p_treat must lie in (0, 1)")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate covariate names")
        columns = set(self.schema.columns)
        if self.proportions is not None:
            probs = [float(self.proportions.get(c.code, 0.0)) for c in CELLS]
            unknown = set(self.proportions) - {c.code for c in CELLS}
            if unknown:
                raise ConfigError(f"unknown stratum codes {sorted(unknown)}")
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise ConfigError("stratum proportions must be >= 0 and sum to 1 (within 1e-9)")
        else:
            for code, coef in self.stratum_coefficients.items():
                if code not in {c.code for c in CELLS} or code == "00":
                    raise ConfigError(f"stratum coefficients must be keyed by non-reference cell codes, got {code!r}")
                bad = set(coef) - columns - {"(intercept)"}
                if bad:
                    raise ConfigError(f"stratum coefficients for {code}: unknown columns {sorted(bad)}")
        for c in CELLS:
            for arm in (0, 1):
                law = self.outcomes.get((c.code, arm))
                if law is None:
                    raise ConfigError(f"no outcome law for stratum {c.code}, arm {arm}")
                self._check_law(law, c.code, arm, columns)
        if self.censoring_rate < 0:
            raise ConfigError("censoring_rate must be >= 0")
        if self.t_max is not None and not self.t_max > 0:
            raise ConfigError("t_max must be > 0")
        if self.family == "exponential" and self.pi_violation_beta:
            for c in CELLS:
                law = self.outcomes[(c.code, 0)]
                if c.s1 == 1 and law.coef == () and not law.param > self.pi_violation_beta:
                    raise ConfigError("pi_violation_beta must stay below the control event rate")

    def _check_law(self, law: OutcomeLaw, code: str, arm: int, columns: set) -> None:
        where = f"outcome law {code}/arm {arm}"
        if self.family == "bernoulli" and not 0.0 <= law.param <= 1.0:
            raise ConfigError(f"{where}: p must lie in [0, 1]")
        if self.family == "normal" and not law.sigma > 0:
            raise ConfigError(f"{where}: sigma must be > 0")
        if self.family == "exponential" and not law.param > 0:
            raise ConfigError(f"{where}: rate must be > 0")
        bad = set(law.coef_dict()) - columns
        if bad:
            raise ConfigError(f"{where}: unknown columns {sorted(bad)}")
        if law.coef and self.family == "bernoulli" and law.param in (0.0, 1.0):
            raise ConfigError(f"{where}: covariate effects need p strictly inside (0, 1)")

    @property
    def kind(self) -> OutcomeKind:
        return FAMILIES[self.family]

    @property
    def schema(self) -> CovariateSchema:
        return CovariateSchema(tuple(c.info for c in self.covariates))

    def with_(self, **changes) -> "SimConfig":
        return SimConfig(**{**self.__dict__, **changes})

    # ------------------------------------------------------------------
    # dict / JSON form
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        """Build from the JSON form used in CLI configs.

        Outcome laws live under ``outcome.params[cell][arm]``; the cell key
        ``"*"`` supplies a default for cells not listed.
        """
        try:
            d = dict(d)
            covs = tuple(
                CovariateGenerator(
                    name=c["name"],
                    kind=c.get("kind", "continuous"),
                    levels=tuple(c.get("levels", ())),
                    probs=tuple(float(p) for p in c.get("probs", ())),
                    loc=float(c.get("loc", 0.0)),
                    scale=float(c.get("scale", 1.0)),
                )
                for c in d.get("covariates", [])
            )
            strata = d.get("strata", {})
            out = d["outcome"]
            params = out.get("params", {})
            outcomes = {}
            for c in CELLS:
                block = params.get(c.code, params.get("*"))
                if block is None:
                    raise ConfigError(f"no outcome params for stratum {c.code}")
                for arm in (0, 1):
                    p = block.get(str(arm), block.get(arm))
                    if p is None:
                        raise ConfigError(f"no outcome params for stratum {c.code}, arm {arm}")
                    outcomes[(c.code, arm)] = _law_from_dict(p)
            coefs = strata.get("coefficients")
            return cls(
                n=int(d["n"]),
                family=out["family"],
                outcomes=outcomes,
                proportions=None if coefs is not None else dict(strata.get("proportions", {})),
                stratum_coefficients=None if coefs is None else {k: dict(v) for k, v in coefs.items()},
                covariates=covs,
                censoring_rate=float(out.get("censoring_rate", 0.0)),
                t_max=None if out.get("t_max") is None else float(out["t_max"]),
                pi_violation_beta=float(d.get("pi_violation_beta", 0.0)),
                seed=int(d.get("seed", 0)),
                p_treat=float(d.get("p_treat", 0.5)),
            )
        except KeyError as exc:
            raise ConfigError(f"simulation config missing field {exc.args[0]!r}") from exc
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed simulation config: {exc}") from exc

    def to_dict(self) -> dict:
        params: dict = {}
        for (code, arm), law in sorted(self.outcomes.items()):
            entry = {_PARAM_NAME[self.family]: law.param}
            if self.family == "normal":
                entry["sigma"] = law.sigma
            if law.coef:
                entry["coef"] = dict(law.coef)
            params.setdefault(code, {})[str(arm)] = entry
        strata = (
            {"proportions": dict(self.proportions)}
            if self.proportions is not None
            else {"coefficients": {k: dict(v) for k, v in self.stratum_coefficients.items()}}
        )
        covs = []
        for c in self.covariates:
            if c.kind == "categorical":
                covs.append({"name": c.name, "kind": c.kind, "levels": list(c.levels), "probs": list(c.probs)})
            else:
                covs.append({"name": c.name, "kind": c.kind, "loc": c.loc, "scale": c.scale})
        return {
            "n": self.n,
            "seed": self.seed,
            "p_treat": self.p_treat,
            "pi_violation_beta": self.pi_violation_beta,
            "covariates": covs,
            "strata": strata,
            "outcome": {
                "family": self.family,
                "params": params,
                "censoring_rate": self.censoring_rate,
                "t_max": self.t_max,
            },
        }

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


_PARAM_NAME = {"bernoulli": "p", "normal": "mu", "exponential": "rate"}


def _law_from_dict(p: Mapping) -> OutcomeLaw:
    for key in ("p", "mu", "rate"):
        if key in p:
            return OutcomeLaw(float(p[key]), float(p.get("sigma", 1.0)), tuple(sorted(dict(p.get("coef", {})).items())))
    raise ConfigError(f"outcome params need one of p, mu or rate: {dict(p)}")


# ----------------------------------------------------------------------------
# Population arrays
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Population:
    """Column form of simulated potential outcomes, in subject order.

    For time-to-event outcomes ``y0``/``y1`` are the censored times,
    ``e0``/``e1`` the event indicators and ``t0``/``t1`` the true times.
    """

    ids: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    kind: OutcomeKind
    raw: dict
    design: np.ndarray
    schema: CovariateSchema
    e0: np.ndarray | None = None
    e1: np.ndarray | None = None
    t0: np.ndarray | None = None
    t1: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.s0.shape[0])

    def cells(self) -> np.ndarray:
        """Index into CELLS per subject."""
        code = {(c.s0, c.s1): k for k, c in enumerate(CELLS)}
        lut = np.empty((2, 2), dtype=np.int64)
        for (a, b), k in code.items():
            lut[a, b] = k
        return lut[self.s0, self.s1]

    def to_records(self) -> list[PotentialRecord]:
        out = []
        names = self.schema.names
        tte = self.kind is OutcomeKind.TIME_TO_EVENT
        for i in range(self.n):
            x = tuple((k, _py(self.raw[k][i])) for k in names)
            if tte:
                y0 = Outcome.time_to_event(self.y0[i], int(self.e0[i]))
                y1 = Outcome.time_to_event(self.y1[i], int(self.e1[i]))
                tt = (float(self.t0[i]), float(self.t1[i]))
            elif self.kind is OutcomeKind.BINARY:
                y0, y1, tt = Outcome.binary(int(self.y0[i])), Outcome.binary(int(self.y1[i])), None
            else:
                y0, y1, tt = Outcome.continuous(self.y0[i]), Outcome.continuous(self.y1[i]), None
            out.append(PotentialRecord(self.ids[i], int(self.s0[i]), int(self.s1[i]), y0, y1, x, tt))
        return out

    def observe(self, z: np.ndarray, landmark: float | None = None) -> TrialData:
        """Array form of :func:`reveal` applied to every subject."""
        z = np.asarray(z, dtype=np.int8)
        treated = z == 1
        s = np.where(treated, self.s1, self.s0).astype(np.float64)
        y = np.where(treated, self.y1, self.y0)
        event = None
        if self.kind is OutcomeKind.TIME_TO_EVENT:
            event = np.where(treated, self.e1, self.e0).astype(np.float64)
            if landmark is not None:
                s[(event == 1) & (y < landmark)] = np.nan
        # schema from the realized values, exactly as loading the records would
        schema = CovariateSchema.infer({k: list(v) for k, v in self.raw.items()})
        return TrialData(
            ids=self.ids,
            z=z,
            s=s,
            y=y.astype(np.float64),
            event=event,
            kind=self.kind,
            schema=schema,
            raw=self.raw,
            design=schema.encode(self.raw, self.n),
        )


def _py(v):
    return float(v) if isinstance(v, (float, np.floating)) else str(v)


def _linear(coef: Mapping, columns: Sequence[str], design: np.ndarray, intercept: float = 0.0) -> np.ndarray:
    eta = np.full(design.shape[0], float(intercept))
    for j, col in enumerate(columns):
        b = coef.get(col)
        if b:
            eta = eta + float(b) * design[:, j]
    return eta


def _membership_probs(config: SimConfig, design: np.ndarray) -> np.ndarray:
    n = design.shape[0]
    if config.proportions is not None:
        p = np.array([float(config.proportions.get(c.code, 0.0)) for c in CELLS])
        return np.broadcast_to(p / p.sum(), (n, len(CELLS)))
    cols = config.schema.columns
    eta = np.full((n, len(CELLS)), -np.inf)
    for k, c in enumerate(CELLS):
        if c.code == "00":
            eta[:, k] = 0.0
        elif c.code in config.stratum_coefficients:
            coef = config.stratum_coefficients[c.code]
            eta[:, k] = _linear(coef, cols, design, coef.get("(intercept)", 0.0))
    eta -= eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def _draw_outcomes(config, design, cell, u, arm):
    """Outcome under ``arm`` for every subject, given its cell index."""
    cols = config.schema.columns
    n = design.shape[0]
    fam = config.family
    beta = config.pi_violation_beta if arm == 0 else 0.0
    out = np.empty(n)
    for k, c in enumerate(CELLS):
        m = cell == k
        if not m.any():
            continue
        law = config.outcomes[(c.code, arm)]
        d = design[m]
        tilt = beta if c.s1 == 1 else 0.0
        uk = u[m]
        if fam == "bernoulli":
            if law.coef:
                p = expit(logit(law.param) + _linear(law.coef_dict(), cols, d))
            else:
                p = np.full(d.shape[0], law.param)
            if tilt:
                p = p * math.exp(tilt) / (p * math.exp(tilt) + 1.0 - p)
            out[m] = (uk < p).astype(np.float64)
        elif fam == "normal":
            mu = law.param + _linear(law.coef_dict(), cols, d)
            out[m] = mu + tilt * law.sigma ** 2 + law.sigma * ndtri(uk)
        else:
            rate = law.param * np.exp(_linear(law.coef_dict(), cols, d)) - tilt
            if np.any(rate <= 0):
                raise ConfigError("pi_violation_beta pushes an exponential rate to <= 0")
            out[m] = -np.log(uk) / rate
    return out


def simulate_population(config: SimConfig) -> Population:
    """Draw the potential-outcome table for ``config.n`` subjects."""
    n = int(config.n)
    key = _stream_key(config.seed, _SUBJECT_STREAM)
    n_cov = len(config.covariates)
    u = uniform_block(key, 0, n, COVARIATE_SLOT + n_cov)
    raw = {}
    for k, gen in enumerate(config.covariates):
        raw[gen.name] = gen.draw(u[:, COVARIATE_SLOT + k])
    schema = config.schema
    design = schema.encode(raw, n)

    probs = _membership_probs(config, design)
    edges = np.cumsum(probs, axis=1)
    # close the last positive cell at exactly 1 so rounding never selects a
    # trailing zero-probability cell
    last = len(CELLS) - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    edges[np.arange(len(CELLS))[None, :] >= last[:, None]] = 1.0
    cell = (u[:, [0]] >= edges).sum(axis=1)
    s0 = np.array([c.s0 for c in CELLS], dtype=np.int8)[cell]
    s1 = np.array([c.s1 for c in CELLS], dtype=np.int8)[cell]

    y0 = _draw_outcomes(config, design, cell, u[:, 1], 0)
    y1 = _draw_outcomes(config, design, cell, u[:, 1], 1)
    ids = np.asarray([f"s{i:09d}" for i in range(n)], dtype=object)
    extra = {"cell": cell, "membership_probs": probs}
    if config.kind is not OutcomeKind.TIME_TO_EVENT:
        return Population(ids, s0, s1, y0, y1, config.kind, raw, design, schema, extra=extra)
    cens = np.full(n, np.inf)
    if config.censoring_rate > 0:
        cens = -np.log(u[:, 2]) / config.censoring_rate
    if config.t_max is not None:
        cens = np.minimum(cens, config.t_max)
    obs0, obs1 = np.minimum(y0, cens), np.minimum(y1, cens)
    e0 = (y0 <= cens).astype(np.int8)
    e1 = (y1 <= cens).astype(np.int8)
    return Population(ids, s0, s1, obs0, obs1, config.kind, raw, design, schema, e0, e1, y0, y1, extra)


def simulate(config: SimConfig) -> list[PotentialRecord]:
    """Potential-outcome records for ``config.n`` subjects, in subject order."""
    return simulate_population(config).to_records()


def assign_arms(n: int, seed: int, p_treat: float = 0.5) -> np.ndarray:
    """Independent Bernoulli(p_treat) assignment from the arm stream."""
    u = uniform_block(_stream_key(seed, _ARM_STREAM), 0, int(n), 1)[:, 0]
    return (u < p_treat).astype(np.int8)


def reveal(record: PotentialRecord, z: int, landmark: float | None = None) -> ObservedRecord:
    """Observed row under assignment ``z`` (consistency).

    For time-to-event outcomes with a landmark, the intercurrent status is
    absent when the event happened before the landmark.
    """
    z = int(z)
    if z not in (0, 1):
        raise ValueError("z must be 0 or 1")
    y = record.y1 if z == 1 else record.y0
    s = record.s1 if z == 1 else record.s0
    if landmark is not None and y.kind is OutcomeKind.TIME_TO_EVENT and y.event == 1 and y.time < landmark:
        s = None
    return ObservedRecord(record.id, z, s, y, record.x)


def observe(records: Sequence[PotentialRecord], z, landmark: float | None = None) -> list[ObservedRecord]:
    return [reveal(r, int(zi), landmark) for r, zi in zip(records, z)]


def simulate_trial(config: SimConfig, landmark: float | None = None) -> tuple[TrialData, Population]:
    """Simulate, randomize and reveal in one pass (array fast path)."""
    pop = simulate_population(config)
    z = assign_arms(pop.n, config.seed, config.p_treat)
    return pop.observe(z, landmark), pop


# ----------------------------------------------------------------------------
# Oracle
# ----------------------------------------------------------------------------


def _pop_from_records(records: Sequence[PotentialRecord]) -> Population:
    if not records:
        raise EstimationError("target stratum empty in simulated population")
    kind = records[0].y0.kind
    tte = kind is OutcomeKind.TIME_TO_EVENT
    f = lambda vals: np.asarray(vals, dtype=np.float64)  # noqa: E731
    return Population(
        ids=np.asarray([r.id for r in records], dtype=object),
        s0=np.asarray([r.s0 for r in records], dtype=np.int8),
        s1=np.asarray([r.s1 for r in records], dtype=np.int8),
        y0=f([r.y0.value for r in records]),
        y1=f([r.y1.value for r in records]),
        kind=kind,
        raw={},
        design=np.empty((len(records), 0)),
        schema=CovariateSchema(),
        e0=f([r.y0.event for r in records]) if tte else None,
        e1=f([r.y1.event for r in records]) if tte else None,
        t0=f([r.true_times[0] if r.true_times else r.y0.value for r in records]) if tte else None,
        t1=f([r.true_times[1] if r.true_times else r.y1.value for r in records]) if tte else None,
    )


def oracle_effect(records, spec: EstimandSpec) -> float:
    """Contrast computed from potential outcomes of stratum members.

    Survival contrasts use the true event times; with a landmark each arm's
    curve is conditioned on that arm's true time exceeding the landmark.
    """
    pop = records if isinstance(records, Population) else _pop_from_records(list(records))
    spec.check_outcome(pop.kind)
    member = np.zeros(pop.n, dtype=bool)
    cells = pop.cells()
    for k, c in enumerate(CELLS):
        if c in spec.stratum:
            member |= cells == k
    if not member.any():
        raise EstimationError("target stratum empty in simulated population")
    if not spec.contrast.is_survival:
        return contrast_value(float(np.mean(pop.y1[member])), float(np.mean(pop.y0[member])), spec.contrast)
    parts = []
    for t in (pop.t1[member], pop.t0[member]):
        if spec.landmark is not None:
            t = t[t > spec.landmark]
            if t.size == 0:
                raise EstimationError("target stratum empty in simulated population")
        if spec.contrast is Contrast.SURVIVAL_DIFFERENCE:
            parts.append(float(np.mean(t > spec.t_star)))
        else:
            parts.append(float(np.mean(np.minimum(t, spec.t_star))))
    return parts[0] - parts[1]


def oracle_proportions(records) -> dict:
    pop = records if isinstance(records, Population) else _pop_from_records(list(records))
    cells = pop.cells()
    return {c: float(np.mean(cells == k)) if pop.n else math.nan for k, c in enumerate(CELLS)}


__all__ = [
    "CovariateGenerator",
    "OutcomeLaw",
    "Population",
    "SimConfig",
    "assign_arms",
    "observe",
    "oracle_effect",
    "oracle_proportions",
    "reveal",
    "simulate",
    "simulate_population",
    "simulate_trial",
]

