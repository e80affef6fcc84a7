import math

import numpy as np
import pytest
from scipy.special import expit, logit

from helpers import binary, binary_cfg, continuous
from stratumlab.core import (
    Contrast,
    EstimandSpec,
    PrincipalStratum,
    StratumSet,
    TrialData,
    itt_effect,
)
from stratumlab.errors import EstimationError, MonotonicityViolation, SeparationError
from stratumlab.estimators import (
    PropensityModel,
    bootstrap_ci,
    em_mixture,
    fit_logistic,
    naive_conditioning,
    pi_multiple_imputation,
    pi_standardization,
    pi_weighting,
    trimming_bounds,
    wald_cace,
)
from stratumlab.estimators.bounds import trimmed_mean_bounds
from stratumlab.resample import stratified_indices
from stratumlab.sim import SimConfig, oracle_effect, simulate_trial

P = PrincipalStratum
S1_EQ_1 = EstimandSpec(StratumSet.where(s1=1), Contrast.RISK_DIFFERENCE)
S1_EQ_1_MD = EstimandSpec(StratumSet.where(s1=1), Contrast.MEAN_DIFFERENCE)


def mc_se(values):
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size))


# ---------------------------------------------------------------- logistic


def test_logistic_intercept_only_closed_form():
    m = fit_logistic(np.empty((10, 0)), np.array([1] * 7 + [0] * 3))
    assert m.coefficients[0] == pytest.approx(logit(0.7), abs=1e-10)
    assert m.converged


def test_logistic_null_slope_within_3_se():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3000, 2))
    y = (rng.random(3000) < 0.4).astype(float)
    m = fit_logistic(x, y)
    se = np.sqrt(np.diag(m.covariance))
    assert np.all(np.abs(m.coefficients[1:]) < 3 * se[1:])


def test_logistic_planted_coefficients():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5000, 1))
    y = (rng.random(5000) < expit(-0.5 + 1.0 * x[:, 0])).astype(float)
    m = fit_logistic(x, y)
    se = np.sqrt(np.diag(m.covariance))
    assert np.all(np.abs(m.coefficients - [-0.5, 1.0]) < 3 * se)


def test_logistic_weights_equal_duplication():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 1))
    y = (rng.random(200) < expit(x[:, 0])).astype(float)
    w = rng.integers(1, 4, size=200).astype(float)
    dup = np.repeat(np.arange(200), w.astype(int))
    a = fit_logistic(x, y, w)
    b = fit_logistic(x[dup], y[dup])
    np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-9, atol=1e-12)


def test_logistic_separation_detected():
    x = np.linspace(-1, 1, 40)[:, None]
    with pytest.raises(SeparationError, match="separation: propensity not identified"):
        fit_logistic(x, (x[:, 0] > 0).astype(float))


def test_logistic_needs_both_labels():
    with pytest.raises(EstimationError):
        fit_logistic(np.zeros((5, 0)), np.ones(5))


# ---------------------------------------------------------------- bootstrap


def _normal_data(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    return TrialData.from_records(continuous([(i % 2, 0, float(v)) for i, v in enumerate(rng.normal(size=n))]))


def test_bootstrap_constant_statistic_zero_width():
    ci = bootstrap_ci(lambda d: 0.7, _normal_data(50), B=100, seed=1)
    assert (ci.lower, ci.upper) == (0.7, 0.7)


def test_bootstrap_sample_mean_width():
    data = _normal_data(1000)
    ci = bootstrap_ci(lambda d: float(np.mean(d.y)), data, B=2000, seed=3)
    expected = 2 * 1.96 / math.sqrt(1000)
    assert ci.lower < 0 < ci.upper
    assert abs((ci.upper - ci.lower) - expected) < 0.15 * expected


def test_bootstrap_is_deterministic_and_preserves_arm_sizes():
    data = _normal_data(101)
    stat = lambda d: float(np.mean(d.y[d.z == 1]))  # noqa: E731
    assert bootstrap_ci(stat, data, B=200, seed=5)[:2] == bootstrap_ci(stat, data, B=200, seed=5)[:2]
    idx = stratified_indices(data.z, 50, 7)
    for row in idx:
        assert np.sum(data.z[row] == 1) == np.sum(data.z == 1)


def test_bootstrap_counts_and_limits_failures():
    data = _normal_data(200)
    calls = {"k": 0}

    def flaky(d):
        calls["k"] += 1
        if calls["k"] % 10 == 0:
            raise EstimationError("boom")
        return float(np.mean(d.y))

    assert bootstrap_ci(flaky, data, B=200, seed=0).n_failed == 20

    def broken(d):
        raise EstimationError("boom")

    with pytest.raises(EstimationError, match="bootstrap unstable for this statistic"):
        bootstrap_ci(broken, data, B=100, seed=0)
    with pytest.raises(ValueError):
        bootstrap_ci(lambda d: 0.0, data, B=99)


# ---------------------------------------------------------------- naive


def test_naive_equals_itt_when_everyone_has_s1():
    recs = binary([(1, 1, 1), (1, 1, 0), (1, 1, 1), (0, 1, 0), (0, 1, 1), (0, 1, 0)])
    naive = naive_conditioning(recs, S1_EQ_1, n_boot=0)
    assert naive.estimate == itt_effect(recs, "risk_difference", n_boot=0).estimate
    assert naive.diagnostics["biased_unless"] == "S(1)=S(0) for all subjects"


def test_naive_rejects_discordant_cells():
    with pytest.raises(EstimationError):
        naive_conditioning(binary([(1, 1, 1), (0, 1, 0)]), EstimandSpec(StratumSet.of(P.TEST_ONLY), "risk_difference"))


def _selection_cfg(n, seed, concordant=False):
    props = {"11": 0.6, "10": 0.0, "00": 0.4, "01": 0.0} if concordant else {"11": 0.3, "10": 0.0, "00": 0.4, "01": 0.3}
    return SimConfig.from_dict({
        "n": n, "seed": seed, "strata": {"proportions": props},
        "outcome": {"family": "normal", "params": {
            "11": {"0": {"mu": 1.0}, "1": {"mu": 1.5}},
            "*": {"0": {"mu": 0.0}, "1": {"mu": 0.5}},
        }},
    })


def test_naive_unbiased_when_treatment_never_moves_s():
    errs = []
    for seed in range(40):
        data, pop = simulate_trial(_selection_cfg(2000, seed, concordant=True))
        errs.append(naive_conditioning(data, S1_EQ_1_MD, n_boot=0).estimate - oracle_effect(pop, S1_EQ_1_MD))
    assert abs(np.mean(errs)) < 3 * mc_se(errs)


def test_naive_bias_matches_precomputed_value():
    # target {S(1)=1} = 11 + 01 (equal shares); control s=1 holds only 11,
    # whose Y(0) mean is 1 sigma higher: naive = 1.0 - 1.0 = 0, oracle = 0.5
    data, pop = simulate_trial(_selection_cfg(100_000, 3))
    naive = naive_conditioning(data, S1_EQ_1_MD, n_boot=0).estimate
    assert oracle_effect(pop, S1_EQ_1_MD) == pytest.approx(0.5, abs=1e-12)
    se = math.sqrt(1 / 30_000 + 1 / 15_000)
    assert abs(naive - 0.0) < 3 * se


# ---------------------------------------------------------------- bounds


def test_trimmed_mean_enumeration():
    assert trimmed_mean_bounds(np.array([0.0, 0.0, 1.0, 1.0]), 0.5) == (0.0, 1.0)
    assert trimmed_mean_bounds(np.array([3.0, 1.0, 2.0]), 1.0) == (2.0, 2.0)


def test_bounds_two_subsets_fixture():
    recs = binary([(1, 1, 1), (1, 0, 0), (0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1)])
    res = trimming_bounds(recs, S1_EQ_1, n_boot=0)
    assert res.components["control"] == (0.0, 1.0)
    assert (res.lower, res.upper) == (0.0, 1.0)
    assert res.diagnostics["fractions"]["control"] == 0.5


def test_bounds_full_mass_is_control_mean():
    recs = continuous([(1, 1, 0.5), (1, 1, 0.9), (0, 0, 0.1), (0, 1, 0.4), (0, 0, 0.8)])
    res = trimming_bounds(recs, S1_EQ_1_MD, outcome_range=(0, 1), n_boot=0)
    c = float(np.mean([0.1, 0.4, 0.8]))
    assert res.components["control"] == (c, c)


def test_bounds_constant_control_outcomes():
    for q in (1, 2, 3):
        rows = [(1, int(i < q), 1) for i in range(4)] + [(0, i % 2, 1) for i in range(5)]
        res = trimming_bounds(binary(rows), S1_EQ_1, n_boot=0)
        assert res.components["control"] == (1.0, 1.0)


def test_bounds_errors():
    with pytest.raises(EstimationError, match="stratum empty on treated arm"):
        trimming_bounds(binary([(1, 0, 1), (1, 0, 0), (0, 1, 1)]), S1_EQ_1, n_boot=0)
    with pytest.raises(EstimationError, match="outcome range"):
        trimming_bounds(continuous([(1, 1, 0.5), (0, 1, 0.2)]), S1_EQ_1_MD, n_boot=0)
    with pytest.raises(EstimationError, match="outside"):
        trimming_bounds(continuous([(1, 1, 0.5), (0, 1, 2.0)]), S1_EQ_1_MD, outcome_range=(0, 1), n_boot=0)
    with pytest.raises(EstimationError, match="declare monotonicity"):
        trimming_bounds(binary([(1, 1, 1), (0, 1, 0)]), EstimandSpec(StratumSet.of(P.BOTH), "risk_difference"), n_boot=0)


def test_bounds_tie_break_by_id():
    # three tied zeros; the kept subset is decided by id but the mean is not
    recs = continuous([(1, 1, 0.0), (1, 0, 0.0), (0, 0, 0.0), (0, 1, 0.0), (0, 0, 0.0), (0, 0, 1.0)])
    res = trimming_bounds(recs, S1_EQ_1_MD, outcome_range=(0, 1), n_boot=0)
    assert res.components["control"] == (0.0, 0.5)


def test_bounds_single_cell_under_monotonicity():
    # S1 >= S0: control s=1 is exactly the 11 cell, so its control side is point identified
    rows = [(0, 1, 1), (0, 1, 0), (0, 0, 1), (0, 0, 0), (0, 0, 0), (0, 0, 1),
            (1, 1, 1), (1, 1, 1), (1, 1, 0), (1, 1, 0), (1, 0, 0), (1, 0, 1)]
    spec = EstimandSpec(StratumSet.of(P.BOTH), "risk_difference")
    res = trimming_bounds(binary(rows), spec, monotonicity="S1_ge_S0", n_boot=0)
    assert res.components["control"] == (0.5, 0.5)
    assert res.diagnostics["fractions"]["treated|s=1"] == pytest.approx(0.5)
    assert res.components["treated"] == (0.0, 1.0)


def test_bounds_risk_ratio_and_bootstrap():
    data, _ = simulate_trial(SimConfig.from_dict(binary_cfg(n=600, seed=3)))
    rr = trimming_bounds(data, EstimandSpec(StratumSet.where(s1=1), Contrast.RISK_RATIO), n_boot=0)
    (l1, u1), (l0, u0) = rr.components["treated"], rr.components["control"]
    assert rr.lower == l1 / u0
    assert rr.upper == (u1 / l0 if l0 > 0 else math.inf)
    res = trimming_bounds(data, S1_EQ_1, n_boot=200, seed=4)
    assert res.lower <= res.upper
    assert res.ci_lower_outer <= res.lower and res.upper <= res.ci_upper_outer
    assert res.to_dict()["method"] == "trimming_bounds"


# ---------------------------------------------------------------- CACE


def _cace_rows(y_t, s_t, y_c, s_c):
    return continuous([(1, s, y) for s, y in zip(s_t, y_t)] + [(0, s, y) for s, y in zip(s_c, y_c)])


def test_cace_direct_arithmetic():
    recs = _cace_rows([0.1] * 10, [1] * 7 + [0] * 3, [0.0] * 10, [1] * 2 + [0] * 8)
    assert wald_cace(recs, "S1_ge_S0", n_boot=0).estimate == pytest.approx(0.2, abs=1e-12)


def test_cace_null_numerator():
    recs = _cace_rows([1.0, 2.0] * 5, [1] * 7 + [0] * 3, [2.0, 1.0] * 5, [1] * 2 + [0] * 8)
    assert wald_cace(recs, "S1_ge_S0", n_boot=0).estimate == 0.0


def test_cace_perfect_instrument_equals_itt():
    recs = _cace_rows([0.3, 1.1, 2.0], [1, 1, 1], [0.7, -0.2, 0.4, 0.0], [0, 0, 0, 0])
    assert wald_cace(recs, "S1_ge_S0", n_boot=0).estimate == itt_effect(recs, "mean_difference", n_boot=0).estimate


def test_cace_errors():
    recs = _cace_rows([1.0] * 4, [1, 1, 0, 0], [0.0] * 4, [1, 1, 0, 0])
    with pytest.raises(EstimationError, match="treatment does not move S; CACE not identified"):
        wald_cace(recs, "S1_ge_S0", n_boot=0)
    recs = _cace_rows([1.0] * 4, [1, 0, 0, 0], [0.0] * 4, [1, 1, 1, 0])
    with pytest.raises(MonotonicityViolation):
        wald_cace(recs, "S1_ge_S0", n_boot=0)


def test_cace_recovers_planted_effect():
    cfg = {
        "n": 4000, "strata": {"proportions": {"11": 0.3, "10": 0.0, "00": 0.3, "01": 0.4}},
        "outcome": {"family": "normal", "params": {
            "01": {"0": {"mu": 1.0}, "1": {"mu": 1.25}},
            "11": {"0": {"mu": 2.0}, "1": {"mu": 2.0}},
            "00": {"0": {"mu": 0.0}, "1": {"mu": 0.0}},
            "10": {"0": {"mu": 0.0}, "1": {"mu": 0.0}},
        }},
    }
    errs = []
    for seed in range(60):
        data, pop = simulate_trial(SimConfig.from_dict({**cfg, "seed": seed}))
        truth = oracle_effect(pop, EstimandSpec(StratumSet.of(P.TEST_ONLY), Contrast.MEAN_DIFFERENCE))
        errs.append(wald_cace(data, "S1_ge_S0", n_boot=0).estimate - truth)
    assert abs(np.mean(errs)) < 3 * mc_se(errs)


# ---------------------------------------------------------------- principal ignorability


def _sim(n=2000, seed=0, **extra):
    return simulate_trial(SimConfig.from_dict(binary_cfg(n=n, seed=seed, **extra)))


def test_pi_weighting_intercept_only_is_exact_two_mean_contrast():
    data, _ = _sim(500, 1)
    res = pi_weighting(data, S1_EQ_1, (), n_boot=0)
    direct = data.y[(data.z == 1) & (data.s == 1)]
    assert res.estimate == float(np.mean(direct)) - float(np.mean(data.y[data.z == 0]))
    assert res.n_effective == float(np.sum(data.z == 0))


def test_pi_weighting_ess_bounded_by_arm_size():
    data, _ = _sim(800, 2)
    res = pi_weighting(data, S1_EQ_1, ("x1", "site"), n_boot=0)
    assert res.n_effective < np.sum(data.z == 0)
    assert res.diagnostics["clipped_predictions"] == 0


def test_pi_weighting_complement_and_control_defined_strata():
    data, _ = _sim(800, 3)
    for stratum in ("S1=0", "S0=1", "S0=0"):
        res = pi_weighting(data, EstimandSpec(StratumSet.parse(stratum), Contrast.RISK_DIFFERENCE), ("x1",), n_boot=0)
        assert -1 <= res.estimate <= 1


def test_pi_weighting_rejects_cells():
    data, _ = _sim(300, 3)
    with pytest.raises(EstimationError, match="S\\(z\\)=v"):
        pi_weighting(data, EstimandSpec(StratumSet.of(P.BOTH), "risk_difference"), n_boot=0)


def test_pi_weighting_bootstrap_and_small_ess_warning():
    data, _ = _sim(400, 4)
    res = pi_weighting(data, S1_EQ_1, ("x1",), n_boot=200, seed=9)
    assert res.ci_lower <= res.estimate <= res.ci_upper
    assert res.diagnostics["bootstrap_B"] == 200
    tiny = binary([(1, 1, 1), (1, 0, 0), (1, 1, 0), (0, 0, 1), (0, 1, 0), (0, 0, 0)])
    assert "warning" in pi_weighting(tiny, S1_EQ_1, n_boot=0).diagnostics


def test_pi_weighting_recovers_oracle_over_seeds():
    errs = []
    for seed in range(40):
        data, pop = _sim(2000, seed)
        errs.append(pi_weighting(data, S1_EQ_1, ("x1", "site"), n_boot=0).estimate - oracle_effect(pop, S1_EQ_1))
    assert abs(np.mean(errs)) < 3 * mc_se(errs)


def test_standardization_one_cell_equals_intercept_only_weighting():
    data, _ = _sim(600, 5)
    assert pi_standardization(data, S1_EQ_1, (), n_boot=0).estimate == pi_weighting(data, S1_EQ_1, (), n_boot=0).estimate


def test_standardization_equal_cell_means_ignore_cell_weights():
    x = [{"g": "a"}, {"g": "b"}] * 6
    rows = [(1, 1, 1), (1, 1, 0), (1, 1, 1), (1, 0, 0), (1, 1, 1), (1, 0, 0),
            (0, 0, 1), (0, 0, 1), (0, 0, 0), (0, 0, 0), (0, 0, 1), (0, 0, 1)]
    res = pi_standardization(binary(rows, x), S1_EQ_1, ("g",), n_boot=0)
    treated = np.mean([1, 0, 1, 1])
    assert res.estimate == pytest.approx(treated - 4 / 6, abs=1e-12)


def test_standardization_positivity_error():
    rows = [(1, 1, 1), (1, 1, 0), (0, 0, 1), (0, 1, 0)]
    x = [{"g": "a"}, {"g": "b"}, {"g": "a"}, {"g": "a"}]
    with pytest.raises(EstimationError, match="positivity violated in cell g=b"):
        pi_standardization(binary(rows, x), S1_EQ_1, ("g",), n_boot=0)


def test_standardization_agrees_with_weighting_on_saturated_cells():
    diffs = []
    for seed in range(30):
        data, _ = _sim(2000, seed)
        diffs.append(
            pi_standardization(data, S1_EQ_1, ("site",), n_boot=0).estimate
            - pi_weighting(data, S1_EQ_1, ("site",), n_boot=0).estimate
        )
    assert abs(np.mean(diffs)) < 3 * mc_se(diffs) + 1e-12


def test_mi_degenerate_propensity_equals_weighting():
    data, _ = _sim(300, 6)
    sure = PropensityModel(np.array([50.0]), (), np.zeros((1, 1)), True, 1)
    mi = pi_multiple_imputation(data, S1_EQ_1, (), m=5, seed=1, propensity=sure)
    w = pi_weighting(data, S1_EQ_1, (), n_boot=0, propensity=sure)
    assert mi.estimate == pytest.approx(w.estimate, abs=1e-15)
    assert mi.diagnostics["between_variance"] == 0.0


def test_mi_pooling_and_validation():
    data, _ = _sim(600, 7)
    a = pi_multiple_imputation(data, S1_EQ_1, ("x1",), m=10, seed=3)
    b = pi_multiple_imputation(data, S1_EQ_1, ("x1",), m=10, seed=3)
    assert a == b
    d = a.diagnostics
    assert d["between_variance"] >= 0
    assert d["total_variance"] == pytest.approx(d["within_variance"] + 1.1 * d["between_variance"])
    assert a.ci_lower < a.estimate < a.ci_upper
    with pytest.raises(ValueError):
        pi_multiple_imputation(data, S1_EQ_1, m=1)


def test_mi_recovers_oracle():
    errs = []
    for seed in range(30):
        data, pop = _sim(2000, 100 + seed)
        errs.append(pi_multiple_imputation(data, S1_EQ_1, ("x1", "site"), m=50, seed=seed).estimate
                    - oracle_effect(pop, S1_EQ_1))
    assert abs(np.mean(errs)) < 3 * mc_se(errs)


# ---------------------------------------------------------------- EM


def _normal_mixture(n=1500, seed=0):
    return simulate_trial(SimConfig.from_dict({
        "n": n, "seed": seed, "strata": {"proportions": {"11": 0.3, "10": 0.5, "00": 0.2, "01": 0.0}},
        "outcome": {"family": "normal", "params": {
            "11": {"0": {"mu": 0.0}, "1": {"mu": 0.5}},
            "10": {"0": {"mu": 3.0}, "1": {"mu": 4.0}},
            "00": {"0": {"mu": 6.0}, "1": {"mu": 6.0}},
            "01": {"0": {"mu": 0.0}, "1": {"mu": 0.0}},
        }},
    }))


def test_em_ascent_posteriors_and_admissibility():
    data, _ = _normal_mixture(1200, 1)
    spec = EstimandSpec(StratumSet.of(P.CONTROL_ONLY), Contrast.MEAN_DIFFERENCE)
    fit, res = em_mixture(data, spec, monotonicity="S0_ge_S1", inits=3, seed=2)
    trace = np.array(fit.loglik_trace)
    assert np.all(np.diff(trace) >= -1e-9)
    np.testing.assert_allclose(fit.posterior.sum(axis=1), 1.0, atol=1e-12)
    for k, cell in enumerate(fit.cells):
        s_cell = np.where(data.z == 1, cell.s1, cell.s0)
        assert np.all(fit.posterior[s_cell != data.s, k] == 0.0)
    assert math.isnan(res.ci_lower) and math.isnan(res.ci_upper)
    assert res.diagnostics["restarts_converged"] >= 1


def test_em_without_monotonicity_keeps_four_cells():
    data, _ = _normal_mixture(800, 2)
    fit, _ = em_mixture(data, EstimandSpec(StratumSet.where(s1=1), Contrast.MEAN_DIFFERENCE), inits=2, seed=0)
    assert len(fit.cells) == 4
    assert sum(fit.proportions.values()) == pytest.approx(1.0)


def test_em_fully_identified_corner_matches_subgroup_means():
    rng = np.random.default_rng(4)
    rows = [(0, 0, float(v)) for v in rng.normal(0, 1, 300)]
    rows += [(1, 1, float(v)) for v in rng.normal(2, 1, 120)] + [(1, 0, float(v)) for v in rng.normal(-1, 1, 180)]
    data = TrialData.from_records(continuous(rows))
    spec = EstimandSpec(StratumSet.where(s1=1), Contrast.MEAN_DIFFERENCE)
    fit, res = em_mixture(data, spec, monotonicity="S1_ge_S0", inits=3, seed=0)
    t = data.z == 1
    # P(S=1|Z=0)=0 empties the 11 cell: treated status reveals the cell
    assert fit.proportions[P.BOTH] == 0.0
    assert res.diagnostics["pruned_cells"] == ["11"]
    assert fit.outcome_params[("01", 1)][0] == pytest.approx(np.mean(data.y[t & (data.s == 1)]), abs=1e-12)
    assert fit.outcome_params[("00", 1)][0] == pytest.approx(np.mean(data.y[t & (data.s == 0)]), abs=1e-12)
    assert fit.proportions[P.TEST_ONLY] == pytest.approx(np.mean(data.s[t]), abs=0.01)


def test_em_errors():
    data, _ = _normal_mixture(400, 3)
    with pytest.raises(EstimationError, match="excluded"):
        em_mixture(data, EstimandSpec(StratumSet.of(P.TEST_ONLY), "mean_difference"), monotonicity="S0_ge_S1")
    rows = [(0, 0, 0.0), (0, 0, 1.0), (1, 0, 0.5), (1, 0, 0.2), (0, 0, 0.3), (1, 0, 0.9)]
    with pytest.raises(EstimationError, match="target stratum vanishes in fit"):
        em_mixture(continuous(rows), EstimandSpec(StratumSet.of(P.BOTH), "mean_difference"),
                   monotonicity="S0_ge_S1", inits=2)


def test_em_deterministic():
    data, _ = _normal_mixture(500, 4)
    spec = EstimandSpec(StratumSet.of(P.CONTROL_ONLY), Contrast.MEAN_DIFFERENCE)
    a = em_mixture(data, spec, monotonicity="S0_ge_S1", inits=2, seed=7)[1]
    b = em_mixture(data, spec, monotonicity="S0_ge_S1", inits=2, seed=7)[1]
    assert a.estimate == b.estimate
