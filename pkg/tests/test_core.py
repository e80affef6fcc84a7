import math

import numpy as np
import pytest

from helpers import binary, continuous
from stratumlab.core import (
    CELLS,
    Arm,
    Contrast,
    CovariateSchema,
    EstimandSpec,
    Monotonicity,
    ObservedRecord,
    Outcome,
    OutcomeKind,
    PotentialRecord,
    PrincipalStratum,
    StratumSet,
    TrialData,
    classify_stratum,
    ess,
    itt_effect,
    stratum_proportions_monotone,
    weighted_mean,
)
from stratumlab.errors import DataError, EstimationError, MonotonicityViolation
from stratumlab.sim import SimConfig, oracle_proportions, simulate_trial

P = PrincipalStratum


# ---------------------------------------------------------------- strata


@pytest.mark.parametrize(
    "s0, s1, cell",
    [(1, 1, P.BOTH), (0, 0, P.NEITHER), (1, 0, P.CONTROL_ONLY), (0, 1, P.TEST_ONLY)],
)
def test_classify_stratum_table_cells(s0, s1, cell):
    assert classify_stratum(s0, s1) is cell
    assert (cell.s0, cell.s1) == (s0, s1)


def test_classify_stratum_is_a_bijection():
    cells = {classify_stratum(a, b) for a in (0, 1) for b in (0, 1)}
    assert cells == set(CELLS) and len(CELLS) == 4


def test_classify_stratum_rejects_non_binary():
    with pytest.raises(DataError):
        classify_stratum(2, 0)


def test_arm_accepts_only_two_levels():
    assert Arm.coerce(1) is Arm.TEST
    for bad in (2, -1, True, "1"):
        with pytest.raises(DataError):
            Arm.coerce(bad)


def test_stratum_set_unions_and_labels():
    s1_eq_1 = StratumSet.where(s1=1)
    assert set(s1_eq_1) == {P.BOTH, P.TEST_ONLY}
    assert s1_eq_1.defining_arm() == (1, 1)
    assert StratumSet.where(s0=0).defining_arm() == (0, 0)
    assert StratumSet.of(P.BOTH).defining_arm() is None
    assert StratumSet.all().is_full and StratumSet.all().label() == "all"
    for text in ("all", "S1=1", "S0=0", "S0=1,S1=1", "11|01"):
        assert StratumSet.parse(StratumSet.parse(text).label()) == StratumSet.parse(text)
    with pytest.raises(ValueError):
        StratumSet(frozenset())
    with pytest.raises(ValueError):
        StratumSet.parse("S2=1")


# ---------------------------------------------------------------- records


def test_outcome_validation():
    with pytest.raises(DataError):
        Outcome.binary(2)
    with pytest.raises(DataError):
        Outcome.time_to_event(-1.0, 1)
    with pytest.raises(DataError):
        Outcome.time_to_event(1.0, 2)
    assert Outcome.time_to_event(2.5, 0).time == 2.5


def test_observed_record_validation():
    with pytest.raises(DataError):
        ObservedRecord("a", 2, 1, Outcome.binary(1))
    with pytest.raises(DataError):
        ObservedRecord("a", 1, 3, Outcome.binary(1))
    with pytest.raises(DataError):
        ObservedRecord("a", 1, 1, Outcome.binary(1), (("x", 1), ("x", 2)))


def test_potential_record_kinds_must_match():
    with pytest.raises(DataError):
        PotentialRecord("a", 0, 1, Outcome.binary(1), Outcome.continuous(1.0))
    assert PotentialRecord("a", 1, 0, Outcome.binary(0), Outcome.binary(1)).stratum is P.CONTROL_ONLY


def test_trial_data_rejects_duplicates_mixed_kinds_and_missing_covariates():
    with pytest.raises(DataError, match="duplicate id"):
        TrialData.from_records(binary([(0, 1, 1), (1, 1, 0)]) + binary([(0, 1, 1)]))
    mixed = binary([(0, 1, 1)]) + [ObservedRecord("zz", 1, 1, Outcome.continuous(0.5))]
    with pytest.raises(DataError, match="mixed"):
        TrialData.from_records(mixed)
    with pytest.raises(DataError, match="missing value"):
        TrialData.from_records(binary([(0, 1, 1), (1, 0, 1)], x=[{"a": 1.0}, {"a": None}]))


def test_categorical_encoding_is_alphabetical_reference_coded():
    schema = CovariateSchema.infer({"site": ["c", "a", "b", "a"], "age": [1.0, 2.0, 3.0, 4.0]})
    assert schema["site"].levels == ("a", "b", "c")
    assert schema.columns == ("site[b]", "site[c]", "age")
    data = TrialData.from_records(
        binary([(0, 1, 1), (1, 1, 0), (0, 0, 1)], x=[{"site": "b"}, {"site": "a"}, {"site": "c"}])
    )
    assert data.columns_for(["site"]) == ("site[b]", "site[c]")
    np.testing.assert_array_equal(data.design_for(["site"]), [[1, 0], [0, 0], [0, 1]])


def test_trial_data_sorts_by_id_and_round_trips():
    recs = binary([(0, 1, 1), (1, 0, 0), (1, None, 1)], x=[{"g": "u"}, {"g": "v"}, {"g": "u"}])
    data = TrialData.from_records(reversed(recs))
    assert list(data.ids) == ["r000", "r001", "r002"]
    assert data.to_records() == recs
    assert math.isnan(data.s[2])


# ---------------------------------------------------------------- contrasts


def test_estimand_spec_invariants():
    with pytest.raises(ValueError):
        EstimandSpec(StratumSet.all(), Contrast.SURVIVAL_DIFFERENCE, t_star=2.0, landmark=3.0)
    with pytest.raises(ValueError):
        EstimandSpec(StratumSet.all(), Contrast.RMST_DIFFERENCE)
    spec = EstimandSpec(StratumSet.all(), Contrast.RISK_RATIO)
    with pytest.raises(EstimationError):
        spec.check_outcome(OutcomeKind.CONTINUOUS)
    assert Contrast.RISK_RATIO.null_value == 1.0 and Contrast.MEAN_DIFFERENCE.null_value == 0.0


def test_itt_extreme_separation():
    recs = continuous([(1, 1, 1.0)] * 3 + [(0, 1, 0.0)] * 3)
    assert itt_effect(recs, "mean_difference", n_boot=0).estimate == 1.0


def test_itt_identical_arms_is_zero():
    ys = [0.3, 1.7, -2.0, 5.5]
    recs = continuous([(1, 0, y) for y in ys] + [(0, 0, y) for y in reversed(ys)])
    assert itt_effect(recs, "mean_difference", n_boot=0).estimate == 0.0


def test_itt_risk_ratio_direct_arithmetic():
    recs = binary([(1, 0, 1), (1, 0, 1), (1, 0, 0), (0, 0, 1), (0, 0, 0), (0, 0, 0)])
    assert itt_effect(recs, "risk_ratio", n_boot=0).estimate == pytest.approx(2.0, abs=1e-15)


def test_itt_errors():
    with pytest.raises(EstimationError, match="arm has no records"):
        itt_effect(binary([(1, 0, 1), (1, 1, 0)]), "risk_difference", n_boot=0)
    with pytest.raises(EstimationError, match="undefined ratio"):
        itt_effect(binary([(1, 0, 1), (0, 0, 0)]), "risk_ratio", n_boot=0)


def test_itt_bootstrap_interval_brackets_estimate():
    rng = np.random.default_rng(3)
    recs = continuous([(i % 2, 0, float(v)) for i, v in enumerate(rng.normal(size=200))])
    res = itt_effect(recs, "mean_difference", n_boot=200, seed=1)
    assert res.ci_lower <= res.estimate <= res.ci_upper
    assert res.n_effective <= 200


def test_weighted_mean_and_ess():
    y = np.array([0.1, 0.2, 0.7])
    assert weighted_mean(y, np.full(3, 0.37)) == float(np.mean(y))
    assert ess(np.ones(5)) == 5.0
    assert ess(np.array([1.0, 0.0, 0.0])) == 1.0


# ---------------------------------------------------------------- monotone proportions


def _arms(p0_hits, n0, p1_hits, n1):
    rows = [(0, int(i < p0_hits), 0) for i in range(n0)] + [(1, int(i < p1_hits), 0) for i in range(n1)]
    return binary(rows)


def test_monotone_proportions_direct_arithmetic():
    props = stratum_proportions_monotone(_arms(6, 10, 2, 10), "S0_ge_S1")
    expected = {P.BOTH: 0.2, P.CONTROL_ONLY: 0.4, P.NEITHER: 0.4, P.TEST_ONLY: 0.0}
    for cell, v in expected.items():
        assert props[cell] == pytest.approx(v, abs=1e-15)


def test_monotone_proportions_equality_case():
    props = stratum_proportions_monotone(_arms(3, 10, 3, 10), "S0_ge_S1")
    assert props[P.CONTROL_ONLY] == 0.0
    props = stratum_proportions_monotone(_arms(3, 10, 3, 10), "S1_ge_S0")
    assert props[P.TEST_ONLY] == 0.0


def test_monotone_proportions_reverse_direction():
    props = stratum_proportions_monotone(_arms(2, 10, 6, 10), "S1_ge_S0")
    assert props[P.BOTH] == pytest.approx(0.2)
    assert props[P.TEST_ONLY] == pytest.approx(0.4)
    assert props[P.NEITHER] == pytest.approx(0.4)
    assert props[P.CONTROL_ONLY] == 0.0
    assert sum(props.values()) == pytest.approx(1.0, abs=1e-12)


def test_monotonicity_contradicted_carries_value():
    with pytest.raises(MonotonicityViolation, match="monotonicity contradicted by data") as exc:
        stratum_proportions_monotone(_arms(2, 10, 6, 10), Monotonicity.S0_GE_S1)
    assert exc.value.value == pytest.approx(-0.4)


def test_monotone_proportions_recover_simulated_cells():
    props = {"11": 0.3, "10": 0.5, "00": 0.2, "01": 0.0}
    cfg = SimConfig.from_dict({
        "n": 2000, "seed": 11, "strata": {"proportions": props},
        "outcome": {"family": "bernoulli", "params": {"*": {"0": {"p": 0.5}, "1": {"p": 0.5}}}},
    })
    data, pop = simulate_trial(cfg)
    est = stratum_proportions_monotone(data, "S0_ge_S1")
    truth = oracle_proportions(pop)
    n_arm = min(int((data.z == 0).sum()), int((data.z == 1).sum()))
    for cell in CELLS:
        se = math.sqrt(max(truth[cell] * (1 - truth[cell]), 0.25 / n_arm) / n_arm) * 2
        assert abs(est[cell] - truth[cell]) <= 3 * se, cell
