"""Hot numeric kernels, each in two flavours.

``*_loop`` functions are written in the nopython subset and get compiled by
numba; ``*_numpy`` functions are vectorized equivalents used when numba is
unavailable or disabled. Set ``STRATUMLAB_DISABLE_JIT=1`` to force the numpy
path. The two flavours of ``uniform_block`` and ``km_table`` agree bit for bit;
``posterior_logsumexp`` agrees to floating-point rounding.
"""
from __future__ import annotations

import os

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 2.0 ** -53


# ----------------------------------------------------------------------------
# SplitMix64 counter stream
# ----------------------------------------------------------------------------

def _mix_numpy(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def uniform_block_numpy(key, start, n, slots):
    """(n, slots) uniforms in (0, 1) for subjects ``start .. start+n-1``.

    Subject i gets key_i = mix(key + (i+1)*GOLDEN); slot j of that subject is
    mix(key_i + (j+1)*GOLDEN) mapped to 53 bits. The value for (i, j) never
    depends on n or on the number of slots.
    """
    with np.errstate(over="ignore"):
        idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        subj = _mix_numpy(np.uint64(key) + idx * GOLDEN)
        j = np.arange(1, slots + 1, dtype=np.uint64)
        raw = _mix_numpy(subj[:, None] + j[None, :] * GOLDEN)
    return ((raw >> _S11).astype(np.float64) + 0.5) * _TWO_M53


def uniform_block_loop(key, start, n, slots):
    out = np.empty((n, slots), dtype=np.float64)
    k = np.uint64(key)
    for i in range(n):
        z = k + np.uint64(start + i + 1) * GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        subj = z ^ (z >> _S31)
        for j in range(slots):
            w = subj + np.uint64(j + 1) * GOLDEN
            w = (w ^ (w >> _S30)) * _M1
            w = (w ^ (w >> _S27)) * _M2
            w = w ^ (w >> _S31)
            out[i, j] = (np.float64(w >> _S11) + 0.5) * _TWO_M53
    return out


def mix64(z: int) -> int:
    """Scalar SplitMix64 finalizer on a Python int (used for key derivation)."""
    mask = (1 << 64) - 1
    z &= mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


# ----------------------------------------------------------------------------
# Weighted product-limit table
# ----------------------------------------------------------------------------

def km_table_numpy(times, events, weights):
    """Product-limit table from records pre-sorted by (time, -event).

    Returns (event_times, at_risk, n_events, survival) restricted to times
    with positive weighted event mass. Censored records at a tied time stay
    in the risk set for that time.
    """
    n = times.shape[0]
    if n == 0:
        empty = np.empty(0)
        return empty, empty, empty, empty
    starts = np.flatnonzero(np.r_[True, times[1:] != times[:-1]])
    # bincount accumulates in record order, matching the compiled loop bit for bit
    gid = np.cumsum(np.r_[True, times[1:] != times[:-1]]) - 1
    group_w = np.bincount(gid, weights=weights)
    group_d = np.bincount(gid, weights=weights * events)
    at_risk = np.cumsum(group_w[::-1])[::-1]
    keep = group_d > 0
    t = times[starts][keep]
    r = at_risk[keep]
    d = group_d[keep]
    surv = np.cumprod(1.0 - d / r)
    return t, r, d, surv


def km_table_loop(times, events, weights):
    n = times.shape[0]
    n_groups = 0
    for i in range(n):
        if i == 0 or times[i] != times[i - 1]:
            n_groups += 1
    g_time = np.empty(n_groups)
    g_w = np.zeros(n_groups)
    g_d = np.zeros(n_groups)
    g = -1
    for i in range(n):
        if i == 0 or times[i] != times[i - 1]:
            g += 1
            g_time[g] = times[i]
        g_w[g] += weights[i]
        g_d[g] += weights[i] * events[i]
    at_risk = np.empty(n_groups)
    acc = 0.0
    for g in range(n_groups - 1, -1, -1):
        acc += g_w[g]
        at_risk[g] = acc
    m = 0
    for g in range(n_groups):
        if g_d[g] > 0:
            m += 1
    t = np.empty(m)
    r = np.empty(m)
    d = np.empty(m)
    s = np.empty(m)
    k = 0
    cur = 1.0
    for g in range(n_groups):
        if g_d[g] > 0:
            cur = cur * (1.0 - g_d[g] / at_risk[g])
            t[k] = g_time[g]
            r[k] = at_risk[g]
            d[k] = g_d[g]
            s[k] = cur
            k += 1
    return t, r, d, s


# ----------------------------------------------------------------------------
# Mixture E-step
# ----------------------------------------------------------------------------

def posterior_logsumexp_numpy(loglik):
    """Row-normalized posteriors and row log-likelihoods.

    ``loglik`` is (n, K) joint log-density with ``-inf`` marking inadmissible
    cells; those cells get posterior exactly 0.
    """
    m = loglik.max(axis=1)
    e = np.exp(loglik - m[:, None])
    s = e.sum(axis=1)
    return e / s[:, None], m + np.log(s)


def posterior_logsumexp_loop(loglik):
    n, k = loglik.shape
    post = np.zeros((n, k))
    row = np.empty(n)
    for i in range(n):
        m = -np.inf
        for j in range(k):
            if loglik[i, j] > m:
                m = loglik[i, j]
        s = 0.0
        for j in range(k):
            v = np.exp(loglik[i, j] - m)
            post[i, j] = v
            s += v
        for j in range(k):
            post[i, j] /= s
        row[i] = m + np.log(s)
    return post, row


# ----------------------------------------------------------------------------
# Dispatch
# ----------------------------------------------------------------------------

_NAMES = ("uniform_block", "km_table", "posterior_logsumexp")


def _jit_disabled() -> bool:
    return os.environ.get("STRATUMLAB_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}


def numpy_kernels() -> dict:
    return {name: globals()[f"{name}_numpy"] for name in _NAMES}


_JIT_CACHE: dict | None = None


def jit_kernels() -> dict:
    """Compiled kernels; raises ImportError when numba is missing."""
    global _JIT_CACHE
    if _JIT_CACHE is None:
        import numba

        _JIT_CACHE = {
            name: numba.njit(cache=True, nogil=True)(globals()[f"{name}_loop"]) for name in _NAMES
        }
    return _JIT_CACHE


def _select() -> tuple[dict, bool]:
    if _jit_disabled():
        return numpy_kernels(), False
    try:
        return jit_kernels(), True
    except ImportError:
        return numpy_kernels(), False


ACTIVE, USING_NUMBA = _select()


def uniform_block(key: int, start: int, n: int, slots: int) -> np.ndarray:
    return ACTIVE["uniform_block"](np.uint64(key), start, n, slots)


def km_table(times, events, weights):
    return ACTIVE["km_table"](
        np.ascontiguousarray(times, dtype=np.float64),
        np.ascontiguousarray(events, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
    )


def posterior_logsumexp(loglik):
    return ACTIVE["posterior_logsumexp"](np.ascontiguousarray(loglik, dtype=np.float64))
