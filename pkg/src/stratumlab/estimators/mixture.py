"""Likelihood-based principal stratification by EM.

Each subject's cell is missing data. Given observed (z, s) only cells with
S(z)=s are admissible, so the observed-data likelihood is

    L_i = sum_{k admissible} pi_k(x_i) f(y_i | k, z_i)

with a multinomial-logistic membership model and Bernoulli or Normal
outcome laws per (cell, arm).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .._kernels import posterior_logsumexp
from ..core import (
    CELLS,
    EstimandSpec,
    EstimateResult,
    Monotonicity,
    OutcomeKind,
    PrincipalStratum,
    TrialData,
    as_trial,
    contrast_value,
    stratum_proportions_monotone,
)
from ..errors import EstimationError
from .logistic import CLIP, fit_multinomial_soft, multinomial_probs

MAX_ITER = 500
REL_TOL = 1e-8
SIGMA_FLOOR = 1e-6
VANISH = 1e-6


@dataclass
class MixtureFit:
    """Result of the best EM restart.

    ``outcome_params`` maps (cell code, arm) to the Bernoulli probability or
    the Normal (mean, sd). ``posterior`` is (n, len(cells)) in the order of
    ``cells`` and of the records sorted by id. ``restarts`` summarizes every
    restart, including its log-likelihood trace.
    """

    cells: tuple[PrincipalStratum, ...]
    membership_coefficients: np.ndarray
    columns: tuple[str, ...]
    outcome_params: dict
    loglik_trace: list
    converged: bool
    posterior: np.ndarray
    proportions: dict
    restarts: list = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def _admissible(data: TrialData, cells) -> np.ndarray:
    if np.isnan(data.s).any():
        raise EstimationError("intercurrent status missing; em_mixture needs s on every record")
    s = data.s.astype(np.int64)
    mask = np.empty((data.n, len(cells)), dtype=bool)
    for k, c in enumerate(cells):
        s_of_cell = np.where(data.z == 1, c.s1, c.s0)
        mask[:, k] = s_of_cell == s
    return mask


class _Model:
    """Parameter container and the two EM steps for one restart."""

    def __init__(self, data: TrialData, x1: np.ndarray, cells, admissible):
        self.data = data
        self.x1 = x1
        self.cells = cells
        self.adm = admissible
        self.binary = data.kind is OutcomeKind.BINARY
        k = len(cells)
        self.beta = np.zeros((x1.shape[1], k - 1))
        self.loc = np.full((k, 2), float(np.mean(data.y)))
        sd = float(np.std(data.y)) if not self.binary else 1.0
        self.scale = np.full((k, 2), max(sd, SIGMA_FLOOR))

    def log_density(self) -> np.ndarray:
        y = self.data.y[:, None]
        z = self.data.z.astype(np.int64)
        loc = self.loc[:, z].T
        if self.binary:
            return np.where(y == 1, np.log(loc), np.log1p(-loc))
        scale = self.scale[:, z].T
        r = (y - loc) / scale
        return -0.5 * r * r - np.log(scale) - 0.5 * math.log(2 * math.pi)

    def e_step(self):
        with np.errstate(divide="ignore"):
            logpi = np.log(multinomial_probs(self.beta, self.x1))
        joint = np.where(self.adm, logpi + self.log_density(), -np.inf)
        post, row = posterior_logsumexp(joint)
        return post, float(np.sum(row))

    def m_step(self, post: np.ndarray):
        self.beta = fit_multinomial_soft(self.x1, post, beta0=self.beta)
        y = self.data.y
        for arm in (0, 1):
            m = self.data.z == arm
            ya = y[m]
            ra = post[m]
            tot = ra.sum(axis=0)
            for k in range(len(self.cells)):
                if tot[k] <= 1e-12:
                    continue
                mu = float(ra[:, k] @ ya / tot[k])
                if self.binary:
                    self.loc[k, arm] = min(max(mu, CLIP), 1.0 - CLIP)
                else:
                    self.loc[k, arm] = mu
                    var = float(ra[:, k] @ (ya - mu) ** 2 / tot[k])
                    self.scale[k, arm] = max(math.sqrt(var), SIGMA_FLOOR)


def _run(model: _Model):
    post, ll = model.e_step()
    trace = [ll]
    converged = False
    for _ in range(MAX_ITER):
        model.m_step(post)
        post, ll = model.e_step()
        prev = trace[-1]
        trace.append(ll)
        if abs(ll - prev) < REL_TOL * max(abs(prev), 1.0):
            converged = True
            break
    return post, trace, converged


def _start_proportions(data: TrialData, cells, monotonicity) -> np.ndarray | None:
    """Cell shares identified from the arm margins, when monotonicity is declared."""
    if monotonicity is None:
        return None
    try:
        props = stratum_proportions_monotone(data, monotonicity)
    except EstimationError:
        return None
    pi = np.array([max(props[c], 0.01) for c in cells])
    return pi / pi.sum()


def _groups(model: _Model) -> list:
    """Observed (arm, status) groups as (row mask, admissible cell indices)."""
    out = []
    for arm in (0, 1):
        for v in (0, 1):
            rows = (model.data.z == arm) & (model.data.s == v)
            if rows.any():
                cols = tuple(int(j) for j in np.flatnonzero(model.adm[rows][0]))
                out.append((arm, rows, cols))
    return out


def start_orderings(model: _Model, inits: int, rng: np.random.Generator) -> list:
    """One label ordering per restart for every mixed group.

    All combinations are visited in turn when there are at most ``inits`` of
    them, so every way of matching cells to the low and high outcomes of a
    mixed group gets a start; otherwise a random subset is used.
    """
    choices = [list(itertools.permutations(cols)) for _, _, cols in _groups(model)]
    combos = list(itertools.product(*choices))
    if len(combos) > inits:
        pick = rng.choice(len(combos), size=inits, replace=False)
        return [combos[i] for i in pick]
    return [combos[r % len(combos)] for r in range(inits)]


def _start(model: _Model, ordering, rng: np.random.Generator, pi0: np.ndarray | None) -> None:
    """Set starting parameters for one restart.

    Cell shares start at the identified values when available (else a flat
    Dirichlet draw). Within each observed group the sorted outcomes are cut
    into chunks sized by those shares and the chunks go to the group's cells
    in the given order; each cell starts near its chunk mean. Binary outcomes
    get sorted random probabilities in the same order.
    """
    k = len(model.cells)
    pi = pi0 if pi0 is not None else rng.dirichlet(np.ones(k))
    model.beta[0] = np.log(pi[1:] / pi[0])
    y = model.data.y
    for (arm, rows, _), order in zip(_groups(model), ordering):
        ys = np.sort(y[rows])
        share = np.array([pi[j] for j in order])
        if model.binary:
            vals = np.sort(rng.uniform(0.1, 0.9, len(order)))
        else:
            cuts = np.round(np.cumsum(share / share.sum()) * ys.size).astype(int)
            lo = np.concatenate([[0], cuts[:-1]])
            vals = [float(np.mean(ys[a:max(b, a + 1)])) if a < ys.size else float(ys[-1]) for a, b in zip(lo, cuts)]
            # jitter keeps restarts that share an ordering apart
            vals = np.array(vals) + rng.normal(0.0, 0.1 * float(np.std(ys)), len(order))
        for j, v in zip(order, vals):
            model.loc[j, arm] = min(max(v, CLIP), 1.0 - CLIP) if model.binary else v
        if not model.binary and ys.size > 1:
            for j in order:
                model.scale[j, arm] = max(float(np.std(ys)), SIGMA_FLOOR)


def _cells_for(monotonicity) -> tuple[PrincipalStratum, ...]:
    if monotonicity is None:
        return CELLS
    excluded = Monotonicity(monotonicity).excluded
    return tuple(c for c in CELLS if c is not excluded)


def _contrast_from_fit(model: _Model, spec: EstimandSpec, cells) -> tuple[float, dict]:
    pi = multinomial_probs(model.beta, model.x1).mean(axis=0)
    props = {c: float(p) for c, p in zip(cells, pi)}
    idx = [k for k, c in enumerate(cells) if c in spec.stratum]
    mass = float(sum(pi[k] for k in idx))
    if mass < VANISH:
        raise EstimationError("target stratum vanishes in fit")
    means = []
    for arm in (1, 0):
        if len(idx) == 1:
            means.append(float(model.loc[idx[0], arm]))
        else:
            means.append(float(sum(pi[k] * model.loc[k, arm] for k in idx) / mass))
    return contrast_value(means[0], means[1], spec.contrast), props


def em_mixture(
    records,
    spec: EstimandSpec,
    covariates: Sequence[str] = (),
    *,
    monotonicity: Monotonicity | str | None = None,
    inits: int = 10,
    seed: int = 0,
) -> tuple[MixtureFit, EstimateResult]:
    """Fit the principal-stratum mixture by EM with random restarts.

    Parameters
    ----------
    records : list of ObservedRecord or TrialData
    spec : EstimandSpec
        Binary or continuous contrast on any stratum set.
    covariates : sequence of str
        Covariates in the membership model.
    monotonicity : optional direction
        Removes the excluded cell from the model.
    inits : int
        Number of random restarts; the converged restart with the highest
        log-likelihood is kept.
    seed : int
        Master seed; restart seeds are spawned from it.

    Returns
    -------
    (MixtureFit, EstimateResult)
        No bootstrap interval is produced (``ci_lower``/``ci_upper`` are
        NaN); diagnostics report the spread of estimates across converged
        restarts instead.
    """
    data = as_trial(records)
    spec.check_outcome(data.kind)
    if data.kind is OutcomeKind.TIME_TO_EVENT:
        raise EstimationError("em_mixture supports binary and continuous outcomes")
    if inits < 1:
        raise ValueError("inits must be at least 1")
    for arm in (0, 1):
        if not np.any(data.z == arm):
            raise EstimationError("arm has no records")
    cells = _cells_for(monotonicity)
    if not any(c in spec.stratum for c in cells):
        raise EstimationError("target stratum is excluded by the declared monotonicity")
    covariates = tuple(covariates)
    x = data.design_for(covariates)
    if x.shape[1]:
        sd = x.std(axis=0)
        if np.any(sd == 0):
            raise EstimationError("a membership covariate is constant")
    x1 = np.column_stack([np.ones(data.n), x])
    adm = _admissible(data, cells)
    # a cell no record of some arm can belong to has maximum-likelihood mass 0
    support = adm[data.z == 0].any(axis=0) & adm[data.z == 1].any(axis=0)
    pruned = tuple(c for c, keep in zip(cells, support) if not keep)
    cells = tuple(c for c, keep in zip(cells, support) if keep)
    adm = adm[:, support]
    if not any(c in spec.stratum for c in cells):
        raise EstimationError("target stratum vanishes in fit")

    pi0 = _start_proportions(data, cells, monotonicity)
    children = np.random.SeedSequence(int(seed)).spawn(inits + 1)
    orderings = start_orderings(_Model(data, x1, cells, adm), inits, np.random.default_rng(children[-1]))
    runs = []
    for child, ordering in zip(children[:-1], orderings):
        rng = np.random.default_rng(child)
        model = _Model(data, x1, cells, adm)
        _start(model, ordering, rng, pi0)
        post, trace, converged = _run(model)
        runs.append((model, post, trace, converged))

    ok = [r for r in runs if r[3]]
    if not ok:
        err = EstimationError(f"EM did not converge in any of {inits} starts")
        err.traces = [r[2] for r in runs]
        raise err
    best = max(ok, key=lambda r: r[2][-1])
    model, post, trace, _ = best
    estimate, props = _contrast_from_fit(model, spec, cells)
    props = {c: props.get(c, 0.0) for c in _cells_for(monotonicity)}

    restart_estimates = []
    for m, _, tr, conv in ok:
        try:
            restart_estimates.append(_contrast_from_fit(m, spec, cells)[0])
        except EstimationError:
            restart_estimates.append(math.nan)
    lls = np.array([r[2][-1] for r in ok])
    params = {}
    for k, c in enumerate(cells):
        for arm in (0, 1):
            params[(c.code, arm)] = (
                float(model.loc[k, arm]) if model.binary
                else (float(model.loc[k, arm]), float(model.scale[k, arm]))
            )
    fit = MixtureFit(
        cells=cells,
        membership_coefficients=model.beta.copy(),
        columns=("(intercept)",) + data.columns_for(covariates),
        outcome_params=params,
        loglik_trace=trace,
        converged=True,
        posterior=post,
        proportions=props,
        restarts=[
            {"loglik": r[2][-1], "iterations": len(r[2]) - 1, "converged": r[3], "loglik_trace": list(r[2])}
            for r in runs
        ],
    )
    ests = np.array(restart_estimates)
    near = np.abs(lls - lls.max()) < 1e-4 * max(1.0, abs(lls.max()))
    diag = {
        "loglik": trace[-1],
        "iterations": len(trace) - 1,
        "restarts": inits,
        "restarts_converged": len(ok),
        "restarts_at_best": int(near.sum()),
        "restart_estimate_range": [float(np.nanmin(ests)), float(np.nanmax(ests))],
        "proportions": {c.code: p for c, p in props.items()},
        "pruned_cells": [c.code for c in pruned],
        "outcome_params": {f"{code}|z={arm}": v for (code, arm), v in params.items()},
    }
    n_eff = float(sum(post[:, k].sum() for k, c in enumerate(cells) if c in spec.stratum))
    result = EstimateResult(estimate, math.nan, math.nan, "em", n_eff, diag)
    return fit, result
