"""Logistic regression by IRLS, plus the soft-label multinomial fit used by EM."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import EstimationError, SeparationError

CLIP = 1e-6
MAX_ITER = 100
TOL = 1e-8
SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class PropensityModel:
    """Fitted P(label = 1 | X). ``coefficients[0]`` is the intercept."""

    coefficients: np.ndarray
    columns: tuple[str, ...]
    covariance: np.ndarray
    converged: bool
    iterations: int
    fitted_on: str = ""

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        return self.coefficients[0] + x @ self.coefficients[1:]

    def predict(self, x: np.ndarray, clip: bool = True) -> np.ndarray:
        p = expit(self.linear_predictor(x))
        return np.clip(p, CLIP, 1.0 - CLIP) if clip else p


def _standardize(x: np.ndarray, rows: np.ndarray):
    mu = x[rows].mean(axis=0) if x.shape[1] else np.empty(0)
    sd = x[rows].std(axis=0) if x.shape[1] else np.empty(0)
    if np.any(sd == 0):
        bad = int(np.flatnonzero(sd == 0)[0])
        raise EstimationError(f"design column {bad} is constant: columns are collinear with the intercept")
    return mu, sd


def fit_logistic(
    x: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    columns: tuple[str, ...] = (),
    fitted_on: str = "",
) -> PropensityModel:
    """Maximum (weighted) likelihood logistic fit with an intercept.

    Iterates Newton/IRLS on internally standardized columns until the
    largest coefficient change is below 1e-8 or 100 iterations pass.
    Non-convergence is reported, not raised; divergence beyond |beta| > 30
    on the standardized scale raises :class:`SeparationError`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels, dtype=np.float64)
    n, p = x.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    pos = w > 0
    if not (np.any(y[pos] == 1) and np.any(y[pos] == 0)):
        raise EstimationError("logistic fit needs at least one of each label")
    mu, sd = _standardize(x, pos)
    xs = np.empty((n, p + 1))
    xs[:, 0] = 1.0
    if p:
        xs[:, 1:] = (x - mu) / sd
    xs, y, w = xs[pos], y[pos], w[pos]

    beta = np.zeros(p + 1)
    ybar = np.sum(w * y) / np.sum(w)
    beta[0] = np.log(ybar / (1.0 - ybar))
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        eta = xs @ beta
        prob = expit(eta)
        v = w * prob * (1.0 - prob)
        info = xs.T @ (xs * v[:, None])
        grad = xs.T @ (w * (y - prob))
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular information matrix: columns are collinear") from exc
        beta = beta + step
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError("separation: propensity not identified")
        if np.max(np.abs(step)) < TOL:
            converged = True
            break
    if not np.all(np.isfinite(beta)):
        raise SeparationError("separation: propensity not identified")

    # back to the original scale
    slopes = beta[1:] / sd if p else np.empty(0)
    intercept = beta[0] - (np.sum(slopes * mu) if p else 0.0)
    coef = np.r_[intercept, slopes]
    prob = expit(xs @ beta)
    v = w * prob * (1.0 - prob)
    xo = np.column_stack([np.ones(xs.shape[0]), x[pos]]) if p else np.ones((xs.shape[0], 1))
    info = xo.T @ (xo * v[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular information matrix: columns are collinear") from exc
    return PropensityModel(coef, tuple(columns), cov, converged, it, fitted_on)


def multinomial_loglik(beta: np.ndarray, x1: np.ndarray, r: np.ndarray) -> float:
    eta = np.column_stack([np.zeros(x1.shape[0]), x1 @ beta])
    m = eta.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(eta - m).sum(axis=1))
    return float(np.sum(r * eta) - np.sum(r.sum(axis=1) * lse))


def multinomial_probs(beta: np.ndarray, x1: np.ndarray) -> np.ndarray:
    eta = np.column_stack([np.zeros(x1.shape[0]), x1 @ beta])
    eta -= eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def fit_multinomial_soft(
    x1: np.ndarray,
    r: np.ndarray,
    beta0: np.ndarray | None = None,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> np.ndarray:
    """Maximize sum_i sum_k r_ik log pi_k(x_i) for a baseline-category model.

    ``x1`` includes the intercept column; ``r`` holds soft labels (rows need
    not be normalized). Returns a (p, K-1) coefficient matrix with category 0
    as reference. Newton steps with step halving, so the objective never
    decreases from ``beta0``.
    """
    n, p = x1.shape
    k = r.shape[1]
    beta = np.zeros((p, k - 1)) if beta0 is None else beta0.copy()
    if k == 1:
        return beta
    if p == 1 and np.all(x1[:, 0] == 1.0):
        tot = r.sum(axis=0)
        if np.any(tot[1:] <= 0) or tot[0] <= 0:
            # boundary: fall back to the iterative path with a floor
            tot = np.maximum(tot, 1e-300)
        return np.log(tot[1:] / tot[0])[None, :]
    obj = multinomial_loglik(beta, x1, r)
    rs = r.sum(axis=1)
    for _ in range(max_iter):
        pi = multinomial_probs(beta, x1)[:, 1:]
        grad = x1.T @ (r[:, 1:] - rs[:, None] * pi)
        d = (k - 1) * p
        hess = np.zeros((d, d))
        for a in range(k - 1):
            for b in range(a, k - 1):
                wab = rs * pi[:, a] * ((a == b) - pi[:, b])
                block = x1.T @ (x1 * wab[:, None])
                hess[a * p:(a + 1) * p, b * p:(b + 1) * p] = block
                hess[b * p:(b + 1) * p, a * p:(a + 1) * p] = block
        g = grad.T.reshape(-1)
        try:
            step = np.linalg.solve(hess + 1e-10 * np.eye(d), g)
        except np.linalg.LinAlgError:
            break
        step = step.reshape(k - 1, p).T
        t = 1.0
        while t > 1e-8:
            cand = beta + t * step
            val = multinomial_loglik(cand, x1, r)
            if val >= obj:
                break
            t *= 0.5
        else:
            break
        gain = val - obj
        beta, obj = cand, val
        if gain < tol * (1.0 + abs(obj)):
            break
    return beta

