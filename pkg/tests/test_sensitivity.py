import math

import numpy as np
import pytest

from helpers import binary, binary_cfg, continuous
from stratumlab.core import Contrast, EstimandSpec, Monotonicity, StratumSet
from stratumlab.errors import DataError, EstimationError
from stratumlab.estimators import pi_weighting, trimming_bounds
from stratumlab.estimators.logistic import CLIP
from stratumlab.sensitivity import (
    GridFailure,
    covariate_set_scan,
    find_tipping_point,
    monotonicity_relaxation,
    tipping_scan_pi,
)
from stratumlab.sim import SimConfig, oracle_effect, simulate_trial

RD = EstimandSpec(StratumSet.where(s1=1), Contrast.RISK_DIFFERENCE)


@pytest.fixture(scope="module")
def trial():
    return simulate_trial(SimConfig.from_dict(binary_cfg(n=1500, seed=12)))


# ---------------------------------------------------------------- tilt scan


def test_beta_zero_is_bit_identical_to_pi_weighting(trial):
    data, _ = trial
    curve = tipping_scan_pi(data, RD, ("x1", "site"), [-1.0, 0.0, 1.0], n_boot=200, seed=5)
    ref = pi_weighting(data, RD, ("x1", "site"), n_boot=200, seed=5)
    assert curve.grid[1] == (0.0, ref.estimate, ref.ci_lower, ref.ci_upper)


def test_large_beta_concentrates_weight_on_events():
    # treated arm: 3 of 5 in the stratum; control: outcomes 1,1,0,0,0
    rows = [(1, 1, 1), (1, 1, 0), (1, 1, 1), (1, 0, 0), (1, 0, 1),
            (0, 0, 1), (0, 1, 1), (0, 1, 0), (0, 0, 0), (0, 1, 0)]
    recs = binary(rows)
    curve = tipping_scan_pi(recs, RD, (), [-30.0, 0.0, 30.0], n_boot=0)
    m1 = 2 / 3
    # base weight 3/5; the two control events move to 1 - CLIP or CLIP
    hi = (2 * (1 - CLIP)) / (2 * (1 - CLIP) + 3 * 0.6)
    lo = (2 * CLIP) / (2 * CLIP + 3 * 0.6)
    assert curve.estimates[2] == pytest.approx(m1 - hi, abs=1e-12)
    assert curve.estimates[0] == pytest.approx(m1 - lo, abs=1e-12)
    assert curve.estimates[1] == pytest.approx(m1 - 0.4, abs=1e-12)


def test_curve_is_continuous_in_beta(trial):
    data, _ = trial
    grid = np.linspace(-1.0, 1.0, 201)
    est = tipping_scan_pi(data, RD, ("x1",), grid, n_boot=0).estimates
    assert np.max(np.abs(np.diff(est))) < 0.01
    # positive tilt puts more weight on control events, lowering the difference
    assert np.all(np.diff(est) < 0)


def test_continuous_outcomes_are_standardized():
    rng = np.random.default_rng(2)
    rows = [(i % 2, int(rng.random() < 0.5), float(v)) for i, v in enumerate(rng.normal(size=200))]
    spec = EstimandSpec(StratumSet.where(s1=1), Contrast.MEAN_DIFFERENCE)
    small = tipping_scan_pi(continuous(rows), spec, (), [0.0, 0.5], n_boot=0).estimates
    scaled = [(z, s, 100.0 * y) for z, s, y in rows]
    big = tipping_scan_pi(continuous(scaled), spec, (), [0.0, 0.5], n_boot=0).estimates
    np.testing.assert_allclose(big, 100.0 * small, rtol=1e-12)


def test_grid_validation(trial):
    data, _ = trial
    for bad in ([], [0.0, 0.0], [1.0, 0.0], [0.0, math.inf]):
        with pytest.raises(ValueError):
            tipping_scan_pi(data, RD, (), bad, n_boot=0)
    with pytest.raises(ValueError, match="B >= 100"):
        tipping_scan_pi(data, RD, (), [0.0], n_boot=10)


def test_tipping_point_interpolates_between_neighbours():
    grid = [(0.0, 0.3, 0.1, 0.5), (1.0, 0.2, 0.04, 0.4), (2.0, 0.1, -0.06, 0.3)]
    # lower bound crosses 0 at 1 + 0.04 / 0.10
    assert find_tipping_point(grid, 0.0) == pytest.approx(1.4)
    assert find_tipping_point(grid[:2], 0.0) is None
    assert find_tipping_point([(-1.0, 0.0, -0.1, 0.1)] + grid, 0.0) == -1.0
    # the lower bound reaches the null first, at 0.5 / 2.0 of the step
    jump = [(0.0, 1.0, 0.5, 1.5), (1.0, -1.0, -1.5, -0.5)]
    assert find_tipping_point(jump, 0.0) == pytest.approx(0.25)
    upper = [(0.0, -0.3, -0.5, -0.2), (1.0, -0.1, -0.3, 0.2)]
    assert find_tipping_point(upper, 0.0) == pytest.approx(0.5)


def test_tipping_point_skips_missing_intervals():
    grid = [(0.0, 0.3, 0.1, 0.5), (1.0, math.nan, math.nan, math.nan), (2.0, 0.1, -0.1, 0.3)]
    assert find_tipping_point(grid, 0.0) == pytest.approx(1.0)


def test_scan_reports_tipping_point_and_dict():
    small = binary_cfg(1500, 12)
    small["outcome"]["params"]["*"]["1"]["p"] = 0.42
    data, _ = simulate_trial(SimConfig.from_dict(small))
    curve = tipping_scan_pi(data, RD, ("x1",), np.linspace(-3, 3, 13), n_boot=100, seed=1)
    assert curve.tipping_point is not None and -3.0 <= curve.tipping_point <= 3.0
    d = curve.to_dict()
    assert len(d["grid"]) == 13 and d["null_value"] == 0.0
    assert d["diagnostics"]["bootstrap_B"] == 100


def test_matched_tilt_beats_untilted():
    wins = 0
    for seed in range(20):
        data, pop = simulate_trial(SimConfig.from_dict(binary_cfg(2000, seed, pi_violation_beta=1.5)))
        e = tipping_scan_pi(data, RD, ("x1", "site"), [0.0, 1.5], n_boot=0).estimates
        truth = oracle_effect(pop, RD)
        wins += abs(e[1] - truth) < abs(e[0] - truth)
    assert wins >= 18


# ---------------------------------------------------------------- monotonicity relaxation


def _bounds_data():
    cfg = SimConfig.from_dict({
        "n": 2000, "seed": 3,
        "strata": {"proportions": {"11": 0.4, "10": 0.0, "00": 0.35, "01": 0.25}},
        "outcome": {"family": "bernoulli", "params": {"*": {"0": {"p": 0.3}, "1": {"p": 0.6}}}},
    })
    return simulate_trial(cfg)[0]


def test_zero_defiers_reproduce_unrelaxed_bounds():
    data = _bounds_data()
    relaxed = monotonicity_relaxation(data, RD, [0.0], monotonicity="S1_ge_S0", n_boot=0)
    plain = trimming_bounds(data, RD, monotonicity="S1_ge_S0", n_boot=0)
    (share, res), = relaxed
    assert share == 0.0
    assert (res.lower, res.upper) == (plain.lower, plain.upper)


def test_defier_bounds_widen_for_small_shares():
    data = _bounds_data()
    out = monotonicity_relaxation(data, RD, [0.0, 0.05, 0.1, 0.15],
                                  monotonicity=Monotonicity.S1_GE_S0, n_boot=0)
    widths = [r.upper - r.lower for _, r in out]
    assert all(b >= a for a, b in zip(widths, widths[1:]))


def test_pinned_defier_sets_are_not_nested():
    # as the (0,0) cell empties, the control trimming fraction tends to one
    data = _bounds_data()
    out = dict(monotonicity_relaxation(data, RD, [0.15, 0.3], monotonicity="S1_ge_S0", n_boot=0))
    assert out[0.3].upper - out[0.3].lower < out[0.15].upper - out[0.15].lower


def test_infeasible_shares_are_marked():
    data = _bounds_data()
    p0 = float(np.nanmean(data.s[data.z == 0]))
    q1 = 1.0 - float(np.nanmean(data.s[data.z == 1]))
    limit = min(p0, q1)
    out = monotonicity_relaxation(data, RD, [0.0, limit - 1e-3, limit + 1e-3, 0.9],
                                  monotonicity="S1_ge_S0", n_boot=0)
    kinds = [isinstance(r, GridFailure) for _, r in out]
    assert kinds == [False, False, True, True]
    assert out[2][1].reason == "infeasible"
    assert "infeasible stratum proportions" in out[2][1].message


def test_relaxation_errors():
    data = _bounds_data()
    with pytest.raises(EstimationError, match="every defier share"):
        monotonicity_relaxation(data, RD, [0.95, 0.99], monotonicity="S1_ge_S0", n_boot=0)
    with pytest.raises(ValueError):
        monotonicity_relaxation(data, RD, [-0.1, 0.1], monotonicity="S1_ge_S0", n_boot=0)


# ---------------------------------------------------------------- covariate sets


def test_duplicate_sets_give_identical_results(trial):
    data, _ = trial
    out = dict(covariate_set_scan(data, RD, [("x1",), ("x1",)], n_boot=100, seed=2))
    ref = pi_weighting(data, RD, ("x1",), n_boot=100, seed=2)
    assert out["x1"] == ref


def test_intercept_baseline_is_always_present_and_sorted(trial):
    data, _ = trial
    out = covariate_set_scan(data, RD, [("site",), ("x1", "site")], n_boot=0)
    labels = [lab for lab, _ in out]
    assert labels == sorted(labels) and "(intercept only)" in labels
    assert dict(out)["(intercept only)"].estimate == pi_weighting(data, RD, (), n_boot=0).estimate


def test_noise_covariate_barely_moves_estimate():
    data, _ = simulate_trial(SimConfig.from_dict(binary_cfg(
        3000, 4, covariates=[{"name": "x1", "kind": "continuous"},
                             {"name": "site", "kind": "categorical", "levels": ["a", "b"], "probs": [0.5, 0.5]},
                             {"name": "noise", "kind": "continuous"}])))
    out = dict(covariate_set_scan(data, RD, [("x1", "site"), ("x1", "site", "noise")], n_boot=0))
    assert abs(out["x1+site"].estimate - out["x1+site+noise"].estimate) < 0.01


def test_unknown_covariate_and_empty_sets(trial):
    data, _ = trial
    with pytest.raises(DataError, match="unknown covariates"):
        covariate_set_scan(data, RD, [("age",)], n_boot=0)
    with pytest.raises(ValueError):
        covariate_set_scan(data, RD, [], n_boot=0)
