"""Small record builders shared by the test modules."""
from __future__ import annotations

from stratumlab.core import ObservedRecord, Outcome


def binary(rows, x=None):
    """rows: iterable of (z, s, y); ids are r000, r001, ..."""
    return [
        ObservedRecord(f"r{i:03d}", z, s, Outcome.binary(y), () if x is None else x[i])
        for i, (z, s, y) in enumerate(rows)
    ]


def continuous(rows, x=None):
    return [
        ObservedRecord(f"r{i:03d}", z, s, Outcome.continuous(y), () if x is None else x[i])
        for i, (z, s, y) in enumerate(rows)
    ]


def tte(rows, x=None):
    """rows: iterable of (z, s, time, event)."""
    return [
        ObservedRecord(f"r{i:03d}", z, s, Outcome.time_to_event(t, e), () if x is None else x[i])
        for i, (z, s, t, e) in enumerate(rows)
    ]


def binary_cfg(n=2000, seed=0, **extra):
    """Two-covariate binary DGP whose control laws are shared across cells."""
    d = {
        "n": n,
        "seed": seed,
        "covariates": [
            {"name": "x1", "kind": "continuous"},
            {"name": "site", "kind": "categorical", "levels": ["a", "b"], "probs": [0.5, 0.5]},
        ],
        "strata": {"coefficients": {
            "11": {"(intercept)": 0.2, "x1": 1.0, "site[b]": 0.5},
            "01": {"(intercept)": -0.3, "x1": 0.5},
        }},
        "outcome": {"family": "bernoulli", "params": {
            "*": {"0": {"p": 0.3, "coef": {"x1": 0.8, "site[b]": -0.4}},
                  "1": {"p": 0.55, "coef": {"x1": 0.8, "site[b]": -0.4}}},
        }},
    }
    d.update(extra)
    return d


# criterion id -> result line, printed in the terminal summary
ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed
