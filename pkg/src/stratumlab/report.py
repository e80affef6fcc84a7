"""Analysis configuration, the batch runner and report emission."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import (
    Contrast,
    EstimandSpec,
    Monotonicity,
    OutcomeKind,
    PrincipalStratum,
    StratumSet,
    TrialData,
    as_trial,
    itt_effect,
)
from .errors import ConfigError, StratumLabError
from .estimators import (
    em_mixture,
    naive_conditioning,
    pi_multiple_imputation,
    pi_standardization,
    pi_weighting,
    trimming_bounds,
    wald_cace,
)
from .sensitivity import (
    GridFailure,
    SensitivityCurve,
    covariate_set_scan,
    monotonicity_relaxation,
    tipping_scan_pi,
)
from .sim import SimConfig, oracle_effect, simulate_trial
from .survival import itt_survival, stratum_survival_contrast

SCHEMA_VERSION = 1
METHODS = ("itt", "naive", "bounds", "cace", "pi_weighting", "pi_standardization", "pi_mi", "em")
SURVIVAL_METHODS = ("itt", "naive", "pi_weighting")
_CAUGHT = (StratumLabError, np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError)


@dataclass(frozen=True)
class AnalysisConfig:
    """Validated analysis configuration (JSON form, schema 1)."""

    spec: EstimandSpec
    methods: tuple[str, ...]
    seed: int = 0
    monotonicity: Monotonicity | None = None
    exclusion_restriction: bool = False
    pi_covariates: tuple[str, ...] = ()
    outcome_range: tuple[float, float] | None = None
    bootstrap_b: int = 1000
    mi_m: int = 20
    em_inits: int = 10
    em_covariates: tuple[str, ...] | None = None
    beta_grid: tuple[float, ...] | None = None
    defier_grid: tuple[float, ...] | None = None
    covariate_sets: tuple[tuple[str, ...], ...] | None = None
    simulation: SimConfig | None = None
    stem: str = "report"
    formats: tuple[str, ...] = ("json", "txt", "svg")
    extra: dict = field(default_factory=dict)

    @property
    def has_sensitivity(self) -> bool:
        return any(g is not None for g in (self.beta_grid, self.defier_grid, self.covariate_sets))

    @classmethod
    def from_dict(cls, d: Mapping, seed: int | None = None) -> "AnalysisConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("config must be a JSON object")
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"config 'schema' must be {SCHEMA_VERSION}, got {d.get('schema')!r}")
        try:
            est = d["estimand"]
            spec = EstimandSpec(
                StratumSet.parse(str(est.get("stratum", "all"))),
                Contrast(est["contrast"]),
                t_star=est.get("t_star"),
                landmark=est.get("landmark"),
            )
        except KeyError as exc:
            raise ConfigError(f"config missing field {exc.args[0]!r}") from exc
        except ValueError as exc:
            choices = ", ".join(c.value for c in Contrast)
            raise ConfigError(f"invalid estimand: {exc} (contrasts: {choices})") from exc
        a = d.get("assumptions", {}) or {}
        mono = a.get("monotonicity")
        try:
            mono = None if mono in (None, "none") else Monotonicity(mono)
        except ValueError as exc:
            raise ConfigError(f"monotonicity must be S0_ge_S1, S1_ge_S0 or null, got {mono!r}") from exc
        rng = a.get("outcome_range")
        if rng is not None:
            if len(rng) != 2 or not float(rng[0]) < float(rng[1]):
                raise ConfigError("outcome_range must be [a, b] with a < b")
            rng = (float(rng[0]), float(rng[1]))
        methods = d.get("methods", [])
        if isinstance(methods, str):
            methods = [methods]
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if len(set(methods)) != len(methods):
            raise ConfigError("methods must not repeat")
        sens = d.get("sensitivity", {}) or {}
        sim = d.get("simulation")
        out = d.get("output", {}) or {}
        cfg_seed = int(d.get("seed", 0)) if seed is None else int(seed)
        if not 0 <= cfg_seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        em = d.get("em", {}) or {}
        b = int((d.get("bootstrap", {}) or {}).get("B", 1000))
        if b != 0 and b < 100:
            raise ConfigError("bootstrap B must be 0 (no intervals) or >= 100")
        m = int((d.get("mi", {}) or {}).get("m", 20))
        if m < 2:
            raise ConfigError("mi m must be >= 2")
        formats = tuple(out.get("formats", ("json", "txt", "svg")))
        if set(formats) - {"json", "txt", "svg"}:
            raise ConfigError("output formats must be among json, txt, svg")
        sim_cfg = None
        if sim is not None:
            sim_cfg = SimConfig.from_dict({**sim, "seed": cfg_seed})
        cfg = cls(
            spec=spec,
            methods=tuple(methods),
            seed=cfg_seed,
            monotonicity=mono,
            exclusion_restriction=bool(a.get("exclusion_restriction", False)),
            pi_covariates=tuple(a.get("pi_covariates", ())),
            outcome_range=rng,
            bootstrap_b=b,
            mi_m=m,
            em_inits=int(em.get("inits", 10)),
            em_covariates=None if em.get("covariates") is None else tuple(em["covariates"]),
            beta_grid=_grid(sens.get("beta_grid"), "beta_grid"),
            defier_grid=_grid(sens.get("defier_grid"), "defier_grid"),
            covariate_sets=None if sens.get("covariate_sets") is None
            else tuple(tuple(s) for s in sens["covariate_sets"]),
            simulation=sim_cfg,
            stem=str(out.get("stem", "report")),
            formats=formats,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        spec = self.spec
        if "cace" in self.methods:
            if self.monotonicity is None or not self.exclusion_restriction:
                raise ConfigError("method 'cace' requires declared monotonicity and exclusion_restriction: true")
        pi_like = [m for m in self.methods if m in ("pi_weighting", "pi_standardization", "pi_mi")]
        if pi_like and spec.stratum.defining_arm() is None:
            raise ConfigError(f"methods {pi_like} need a stratum of the form S(z)=v, got {spec.stratum.label()}")
        if "bounds" in self.methods and spec.stratum.defining_arm() is None and self.monotonicity is None:
            raise ConfigError("bounds for this stratum need a declared monotonicity direction")
        if spec.contrast.is_survival:
            bad = [m for m in self.methods if m not in SURVIVAL_METHODS]
            if bad:
                raise ConfigError(f"methods {bad} do not support {spec.contrast.value}")
        if self.beta_grid is not None and spec.stratum.defining_arm() is None:
            raise ConfigError("a beta_grid scan needs a stratum of the form S(z)=v")
        if self.defier_grid is not None and self.monotonicity is None:
            raise ConfigError("a defier_grid scan needs a declared monotonicity direction")
        if (self.beta_grid is not None or self.covariate_sets is not None) and spec.contrast.is_survival:
            raise ConfigError("sensitivity scans support binary and continuous contrasts")
        if self.em_inits < 1:
            raise ConfigError("em inits must be >= 1")
        if self.simulation is not None:
            kind = self.simulation.kind
            try:
                spec.check_outcome(kind)
            except StratumLabError as exc:
                raise ConfigError(f"simulation outcome does not fit the estimand: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "seed": self.seed,
            "estimand": self.spec.to_dict(),
            "assumptions": {
                "monotonicity": None if self.monotonicity is None else self.monotonicity.value,
                "exclusion_restriction": self.exclusion_restriction,
                "pi_covariates": list(self.pi_covariates),
                "outcome_range": None if self.outcome_range is None else list(self.outcome_range),
            },
            "methods": list(self.methods),
            "bootstrap": {"B": self.bootstrap_b},
            "mi": {"m": self.mi_m},
            "em": {"inits": self.em_inits, "covariates": None if self.em_covariates is None else list(self.em_covariates)},
            "sensitivity": {
                "beta_grid": None if self.beta_grid is None else list(self.beta_grid),
                "defier_grid": None if self.defier_grid is None else list(self.defier_grid),
                "covariate_sets": None if self.covariate_sets is None else [list(s) for s in self.covariate_sets],
            },
            "simulation": None if self.simulation is None else self.simulation.to_dict(),
            "output": {"stem": self.stem, "formats": list(self.formats)},
        }

    def with_(self, **changes) -> "AnalysisConfig":
        return AnalysisConfig(**{**self.__dict__, **changes})


def _grid(value, name: str):
    if value is None:
        return None
    if isinstance(value, Mapping):
        try:
            lo, hi, k = float(value["from"]), float(value["to"]), int(value["points"])
        except KeyError as exc:
            raise ConfigError(f"{name} needs 'from', 'to' and 'points'") from exc
        if k < 1 or (k > 1 and not hi > lo):
            raise ConfigError(f"{name}: need points >= 1 and to > from")
        return tuple(float(v) for v in np.linspace(lo, hi, k))
    g = tuple(float(v) for v in value)
    if not g or any(b <= a for a, b in zip(g, g[1:])):
        raise ConfigError(f"{name} must be nonempty and strictly increasing")
    return g


def default_beta_grid() -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(-2.0, 2.0, 41))


def load_config(path: str | Path, seed: int | None = None) -> AnalysisConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return AnalysisConfig.from_dict(d, seed=seed)


# ----------------------------------------------------------------------------
# Running
# ----------------------------------------------------------------------------


def moved_stratum(direction: Monotonicity) -> PrincipalStratum:
    """Cell whose status treatment changes under the given monotonicity."""
    return PrincipalStratum.CONTROL_ONLY if direction is Monotonicity.S0_GE_S1 else PrincipalStratum.TEST_ONLY


def method_target(cfg: AnalysisConfig, method: str) -> EstimandSpec:
    """Estimand each method is aimed at (used to pair results with oracles)."""
    spec = cfg.spec
    if method == "itt":
        return EstimandSpec(StratumSet.all(), spec.contrast, spec.t_star, None)
    if method == "cace":
        contrast = Contrast.RISK_DIFFERENCE if spec.contrast is Contrast.RISK_RATIO else spec.contrast
        return EstimandSpec(StratumSet.of(moved_stratum(cfg.monotonicity)), contrast)
    return spec


def run_method(cfg: AnalysisConfig, method: str, data: TrialData):
    spec, b, seed = cfg.spec, cfg.bootstrap_b, cfg.seed
    covs = cfg.pi_covariates
    if spec.contrast.is_survival:
        if method == "itt":
            return itt_survival(data, spec, n_boot=b, seed=seed)
        if method == "naive":
            return naive_conditioning(data, spec, n_boot=b, seed=seed)
        return stratum_survival_contrast(data, spec, covs, n_boot=b, seed=seed)
    if method == "itt":
        return itt_effect(data, spec.contrast, n_boot=b, seed=seed)
    if method == "naive":
        return naive_conditioning(data, spec, n_boot=b, seed=seed)
    if method == "bounds":
        return trimming_bounds(
            data, spec, monotonicity=cfg.monotonicity, outcome_range=cfg.outcome_range, n_boot=b, seed=seed
        )
    if method == "cace":
        return wald_cace(data, cfg.monotonicity, n_boot=b, seed=seed)
    if method == "pi_weighting":
        return pi_weighting(data, spec, covs, n_boot=b, seed=seed)
    if method == "pi_standardization":
        return pi_standardization(data, spec, covs, n_boot=b, seed=seed)
    if method == "pi_mi":
        return pi_multiple_imputation(data, spec, covs, m=cfg.mi_m, seed=seed)
    if method == "em":
        covs_em = cfg.pi_covariates if cfg.em_covariates is None else cfg.em_covariates
        return em_mixture(data, spec, covs_em, monotonicity=cfg.monotonicity, inits=cfg.em_inits, seed=seed)[1]
    raise ConfigError(f"unknown method {method!r}")


def data_summary(data: TrialData) -> dict:
    arms = {}
    for z, name in ((0, "control"), (1, "test")):
        m = data.z == z
        s = data.s[m]
        obs = s[~np.isnan(s)]
        arms[name] = {
            "n": int(m.sum()),
            "s_missing": int(np.isnan(s).sum()),
            "s_rate": float(np.mean(obs)) if obs.size else None,
            "outcome_mean": float(np.mean(data.y[m])) if m.any() else None,
        }
        if data.event is not None:
            arms[name]["events"] = int(data.event[m].sum())
    out = {
        "n": data.n,
        "outcome_kind": data.kind.value,
        "covariates": {c.name: c.kind for c in data.schema.covariates},
        "arms": arms,
    }
    r0, r1 = arms["control"]["s_rate"], arms["test"]["s_rate"]
    if r0 is not None and r1 is not None:
        # the testable implication of each monotonicity direction
        out["s_rate_difference_control_minus_test"] = r0 - r1
        out["consistent_with"] = [
            d.value for d, ok in ((Monotonicity.S0_GE_S1, r0 >= r1), (Monotonicity.S1_GE_S0, r1 >= r0)) if ok
        ]
    return out


def _result_dict(res) -> dict:
    return res.to_dict()


def run(cfg: AnalysisConfig, data: TrialData | Sequence | None = None, *, sensitivity_only: bool = False) -> dict:
    """Execute every selected method and scan; method errors are captured.

    Without ``data`` the config's simulation block is simulated in process
    and the oracle value of each method's target is reported alongside.
    """
    pop = None
    if data is None:
        if cfg.simulation is None:
            raise ConfigError("no data given and the config has no simulation block")
        data, pop = simulate_trial(cfg.simulation, cfg.spec.landmark)
    data = as_trial(data)
    try:
        cfg.spec.check_outcome(data.kind)
    except StratumLabError as exc:
        raise ConfigError(f"data do not fit the estimand: {exc}") from exc
    known = set(data.schema.names)
    for name, covs in (("pi_covariates", cfg.pi_covariates), ("em covariates", cfg.em_covariates or ())):
        missing = [c for c in covs if c not in known]
        if missing:
            raise ConfigError(f"{name} {missing} not in the data; available: {sorted(known)}")
    for s in cfg.covariate_sets or ():
        missing = [c for c in s if c not in known]
        if missing:
            raise ConfigError(f"covariate set {list(s)} names unknown covariates {missing}")

    report: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "data_summary": data_summary(data),
        "estimates": {},
        "sensitivity": {},
    }
    failures = 0
    methods = () if sensitivity_only else cfg.methods
    for method in methods:
        try:
            report["estimates"][method] = _result_dict(run_method(cfg, method, data))
        except _CAUGHT as exc:
            failures += 1
            report["estimates"][method] = {"error": str(exc), "method": method}
    sens = report["sensitivity"]
    if cfg.beta_grid is not None:
        try:
            sens["tipping_pi"] = tipping_scan_pi(
                data, cfg.spec, cfg.pi_covariates, cfg.beta_grid, n_boot=cfg.bootstrap_b, seed=cfg.seed
            ).to_dict()
        except _CAUGHT as exc:
            failures += 1
            sens["tipping_pi"] = {"error": str(exc)}
    if cfg.defier_grid is not None:
        try:
            pts = monotonicity_relaxation(
                data, cfg.spec, cfg.defier_grid, monotonicity=cfg.monotonicity,
                outcome_range=cfg.outcome_range, n_boot=cfg.bootstrap_b, seed=cfg.seed,
            )
            sens["monotonicity_relaxation"] = [
                {"defier": d, **({"status": r.reason, "error": r.message} if isinstance(r, GridFailure)
                                 else {"status": "ok", **r.to_dict()})}
                for d, r in pts
            ]
        except _CAUGHT as exc:
            failures += 1
            sens["monotonicity_relaxation"] = {"error": str(exc)}
    if cfg.covariate_sets is not None:
        try:
            pts = covariate_set_scan(data, cfg.spec, cfg.covariate_sets, n_boot=cfg.bootstrap_b, seed=cfg.seed)
            sens["covariate_sets"] = [
                {"label": lab, **({"status": r.reason, "error": r.message} if isinstance(r, GridFailure)
                                  else {"status": "ok", **r.to_dict()})}
                for lab, r in pts
            ]
        except _CAUGHT as exc:
            failures += 1
            sens["covariate_sets"] = {"error": str(exc)}
    if pop is not None:
        oracle = {}
        for method in methods:
            try:
                oracle[method] = oracle_effect(pop, method_target(cfg, method))
            except _CAUGHT as exc:
                oracle[method] = {"error": str(exc)}
        try:
            oracle["estimand"] = oracle_effect(pop, cfg.spec)
        except _CAUGHT as exc:
            oracle["estimand"] = {"error": str(exc)}
        report["oracle"] = oracle
    report["summary"] = {
        "methods_run": len(methods),
        "failures": failures,
        "line": f"{len(methods)} method(s) run, {failures} failure(s)",
    }
    return canonical(report)


# ----------------------------------------------------------------------------
# Emission
# ----------------------------------------------------------------------------


def canonical(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None, tuples to lists."""
    if isinstance(obj, Mapping):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [canonical(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "value"):
        return canonical(obj.value)
    return str(obj)


def to_json(report: Mapping) -> str:
    return json.dumps(canonical(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _num(v, digits: int = 4) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [max(len(h), *(len(r[j]) for r in rows)) if rows else len(h) for j, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    out = [line.rstrip(), "  ".join("-" * w for w in widths)]
    for r in rows:
        out.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths))).rstrip())
    return out


def to_text(report: Mapping) -> str:
    cfg = report["config"]
    est = cfg["estimand"]
    lines = [
        f"estimand: {est['contrast']} in stratum {est['stratum']}"
        + (f", t*={est['t_star']}" if est.get("t_star") is not None else "")
        + (f", landmark={est['landmark']}" if est.get("landmark") is not None else ""),
        f"seed: {report['seed']}",
        "",
    ]
    ds = report["data_summary"]
    rows = []
    for name in ("control", "test"):
        a = ds["arms"][name]
        rows.append([name, str(a["n"]), _num(a["s_rate"]), str(a["s_missing"]), _num(a["outcome_mean"])])
    lines += _table(["arm", "n", "P(S=1)", "S missing", "mean outcome"], rows)
    lines.append("")
    oracle = report.get("oracle", {})
    rows = []
    for method, r in report["estimates"].items():
        if "error" in r:
            rows.append([method, "error", "", "", "", r["error"]])
            continue
        if "lower" in r:
            rows.append([method, f"[{_num(r['lower'])}, {_num(r['upper'])}]",
                         _num(r["ci_lower_outer"]), _num(r["ci_upper_outer"]), "-", _oracle_note(oracle, method)])
        else:
            rows.append([method, _num(r["estimate"]), _num(r["ci_lower"]), _num(r["ci_upper"]),
                         _num(r["n_effective"], 1), _oracle_note(oracle, method)])
    if rows:
        lines += _table(["method", "estimate", "ci_lower", "ci_upper", "n_eff", "note"], rows)
        lines.append("")
    sens = report.get("sensitivity", {})
    tp = sens.get("tipping_pi")
    if tp is not None:
        if "error" in tp:
            lines.append(f"tipping scan: error: {tp['error']}")
        else:
            lines.append(f"tipping scan ({len(tp['grid'])} points), tipping point: {_num(tp['tipping_point'])}")
            rows = [[_num(g["beta"], 3), _num(g["estimate"]), _num(g["ci_lower"]), _num(g["ci_upper"])]
                    for g in tp["grid"]]
            lines += _table(["beta", "estimate", "ci_lower", "ci_upper"], rows)
        lines.append("")
    mr = sens.get("monotonicity_relaxation")
    if mr is not None:
        if isinstance(mr, Mapping):
            lines.append(f"monotonicity relaxation: error: {mr['error']}")
        else:
            rows = [[_num(p["defier"]), p["status"], _num(p.get("lower")), _num(p.get("upper"))] for p in mr]
            lines += _table(["defier", "status", "lower", "upper"], rows)
        lines.append("")
    cs = sens.get("covariate_sets")
    if cs is not None:
        if isinstance(cs, Mapping):
            lines.append(f"covariate sets: error: {cs['error']}")
        else:
            rows = [[p["label"], p["status"], _num(p.get("estimate")), _num(p.get("ci_lower")), _num(p.get("ci_upper"))]
                    for p in cs]
            lines += _table(["covariates", "status", "estimate", "ci_lower", "ci_upper"], rows)
        lines.append("")
    lines.append(report["summary"]["line"])
    return "\n".join(lines) + "\n"


def _oracle_note(oracle: Mapping, method: str) -> str:
    v = oracle.get(method)
    return f"oracle {_num(v)}" if isinstance(v, float) else ""


def curve_svg(curve: Mapping, title: str = "", width: int = 640, height: int = 400) -> str:
    """SVG 1.1 line plot of a sensitivity curve: estimate polyline, CI band,
    dashed null line and, when present, the tipping point marker."""
    grid = curve["grid"]
    betas = [g["beta"] for g in grid]
    pts = [(g["beta"], g["estimate"]) for g in grid if g["estimate"] is not None]
    band = [(g["beta"], g["ci_lower"], g["ci_upper"]) for g in grid
            if g["ci_lower"] is not None and g["ci_upper"] is not None]
    null = curve["null_value"]
    ys = [y for _, y in pts] + [v for _, lo, hi in band for v in (lo, hi)] + [null]
    y_lo, y_hi = min(ys), max(ys)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = min(betas), max(betas)
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    left, right, top, bottom = 60, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return top + (y_hi - y) / (y_hi - y_lo) * ph

    def fmt(v):
        return f"{v:.2f}"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{_esc(title)}</title>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    if band:
        poly = [f"{fmt(sx(b))},{fmt(sy(hi))}" for b, _, hi in band]
        poly += [f"{fmt(sx(b))},{fmt(sy(lo))}" for b, lo, _ in reversed(band)]
        out.append(f'<polygon class="ci-band" points="{" ".join(poly)}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>')
    out.append(
        f'<line class="null" x1="{left}" y1="{fmt(sy(null))}" x2="{left + pw}" y2="{fmt(sy(null))}" '
        'stroke="#d62728" stroke-dasharray="6,4"/>'
    )
    line = " ".join(f"{fmt(sx(x))},{fmt(sy(y))}" for x, y in pts)
    out.append(f'<polyline class="estimate" points="{line}" fill="none" stroke="#08519c" stroke-width="2"/>')
    tp = curve.get("tipping_point")
    if tp is not None:
        out.append(
            f'<line class="tipping" x1="{fmt(sx(tp))}" y1="{top}" x2="{fmt(sx(tp))}" y2="{top + ph}" '
            'stroke="#ff7f0e" stroke-dasharray="2,3"/>'
        )
        out.append(f'<circle class="tipping-point" cx="{fmt(sx(tp))}" cy="{fmt(sy(null))}" r="5" fill="#ff7f0e"/>')
    for k in range(5):
        yv = y_lo + (y_hi - y_lo) * k / 4
        xv = x_lo + (x_hi - x_lo) * k / 4
        out.append(f'<text x="{left - 6}" y="{fmt(sy(yv) + 4)}" font-size="11" text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{fmt(sx(xv))}" y="{top + ph + 16}" font-size="11" text-anchor="middle">{xv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 6}" font-size="12" text-anchor="middle">beta</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="18" font-size="13" text-anchor="middle">{_esc(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit(report: Mapping, stem: str | Path, formats: Sequence[str] = ("json", "txt", "svg")) -> list[Path]:
    """Write the report files; returns their paths."""
    stem = Path(stem)
    written = []
    if stem.parent and not stem.parent.exists():
        stem.parent.mkdir(parents=True, exist_ok=True)
    if "json" in formats:
        p = stem.with_name(stem.name + ".json")
        p.write_text(to_json(report))
        written.append(p)
    if "txt" in formats:
        p = stem.with_name(stem.name + ".txt")
        p.write_text(to_text(report))
        written.append(p)
    if "svg" in formats:
        for name, curve in sorted(report.get("sensitivity", {}).items()):
            if isinstance(curve, Mapping) and "grid" in curve and "error" not in curve:
                p = stem.with_name(f"{stem.name}.{name}.svg")
                p.write_text(curve_svg(curve, title=f"{name}: {report['config']['estimand']['contrast']}"))
                written.append(p)
    return written


__all__ = [
    "AnalysisConfig",
    "METHODS",
    "canonical",
    "curve_svg",
    "data_summary",
    "default_beta_grid",
    "emit",
    "load_config",
    "method_target",
    "run",
    "run_method",
    "to_json",
    "to_text",
]

_ = (OutcomeKind, SensitivityCurve)
