"""Arm-stratified percentile bootstrap."""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import EstimationError, StratumLabError

MAX_FAILURE_FRACTION = 0.2


class BootstrapCI(NamedTuple):
    lower: float | np.ndarray
    upper: float | np.ndarray
    n_failed: int
    replicates: np.ndarray


def stratified_indices(z: np.ndarray, B: int, seed: int) -> np.ndarray:
    """(B, n) resample index matrix; each row keeps both arm sizes.

    All rows come from one generator seeded by ``seed``, so row b is fixed
    for a given (z, B, seed) regardless of how rows are later consumed.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    out = np.empty((B, z.shape[0]), dtype=np.int64)
    col = 0
    for arm in (0, 1):
        members = np.flatnonzero(z == arm)
        k = members.shape[0]
        if k:
            out[:, col:col + k] = members[rng.integers(0, k, size=(B, k))]
        col += k
    return out


def bootstrap_ci(
    statistic: Callable,
    data,
    B: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> BootstrapCI:
    """Percentile interval of ``statistic`` over arm-stratified resamples.

    ``data`` is a :class:`~stratumlab.core.TrialData`; ``statistic`` maps a
    TrialData to a float or a 1-d array (vector statistics get elementwise
    intervals). Resamples on which the statistic raises a package error are
    skipped and counted.
    """
    if B < 100:
        raise ValueError("bootstrap needs B >= 100")
    idx = stratified_indices(data.z, B, seed)
    reps = []
    failed = 0
    for b in range(B):
        try:
            reps.append(np.asarray(statistic(data.take(idx[b])), dtype=np.float64))
        except (StratumLabError, np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError):
            failed += 1
    if failed > MAX_FAILURE_FRACTION * B:
        raise EstimationError(f"bootstrap unstable for this statistic ({failed}/{B} resamples failed)")
    reps = np.array(reps)
    lo, hi = percentile_interval(reps, level)
    if reps.ndim == 1:
        lo, hi = float(lo), float(hi)
    return BootstrapCI(lo, hi, failed, reps)


def percentile_interval(reps: np.ndarray, level: float = 0.95):
    """Equal-tailed percentile interval along the first axis."""
    alpha = (1.0 - level) / 2.0
    return np.quantile(reps, [alpha, 1.0 - alpha], axis=0)
