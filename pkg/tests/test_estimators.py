import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vcilab.estimators import (
    EstimatorReport,
    influence_variance,
    plug_in_mean,
    predict_potential_outcomes,
    read_predictions,
    recombine,
    reports_csv,
    robust_ate,
    robust_ate_covariate,
    robust_rows,
    write_predictions,
)
from vcilab.models import ModelConfig, PropensityModel, VciModel
from vcilab.scm import ArrayData, TreatmentSpace, generate_dataset, linear_gaussian_spec, true_marginal

# the two-sample example: unit 0 treated with e=0.5, y=2, m=1; unit 1 untreated with m=1.5
Y2 = np.array([[2.0], [0.0]])
T2 = np.array([1, 0])
S2 = np.array([0, 1])
M2 = np.array([[1.0], [1.5]])
E2 = np.array([0.5, 0.8])


def test_two_sample_hand_computation():
    rows = robust_rows(Y2, T2, S2, M2, E2, alpha=1)
    np.testing.assert_allclose(rows[:, 0], [3.0, 1.5])
    assert robust_ate(Y2, T2, S2, M2, E2, alpha=1).estimate[0] == pytest.approx(2.25)


def test_plug_in_differs_from_robust():
    assert plug_in_mean(M2).estimate[0] == pytest.approx(1.25)


def test_all_treated_with_unit_propensity_is_sample_mean():
    rng = np.random.default_rng(0)
    y, m = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    est = robust_ate(y, np.full(30, 2), np.zeros(30, int), m, np.ones(30), alpha=2).estimate
    np.testing.assert_allclose(est, y.mean(axis=0), atol=1e-14)


def test_treated_units_contribute_outcome_exactly_when_propensity_one():
    rng = np.random.default_rng(1)
    y, m = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
    t = rng.integers(0, 2, 10)
    rows = robust_rows(y, t, np.zeros(10, int), m, np.ones(10), alpha=1)
    np.testing.assert_array_equal(rows[t == 1], y[t == 1])
    np.testing.assert_array_equal(rows[t == 0], m[t == 0])


def test_propensity_model_is_evaluated_at_observed_treatment():
    e = PropensityModel.from_table([[0.5, 0.5], [0.2, 0.8]])
    a = robust_ate(Y2, T2, S2, M2, e, alpha=1).estimate
    b = robust_ate(Y2, T2, S2, M2, np.array([0.5, 0.2]), alpha=1).estimate
    np.testing.assert_array_equal(a, b)


def test_inverse_weight_is_capped():
    rows = robust_rows([[1.0]], [1], [0], [[0.0]], [1e-6], alpha=1, cap_floor=0.01)
    assert rows[0, 0] == pytest.approx(100.0)


def test_errors():
    with pytest.raises(ValueError, match="positivity"):
        robust_rows(Y2, T2, S2, M2, np.array([0.0, 0.5]), alpha=1)
    with pytest.raises(ValueError, match="non-finite"):
        robust_rows(Y2, T2, S2, np.array([[1.0], [np.nan]]), E2, alpha=1)
    with pytest.raises(ValueError, match="align"):
        robust_rows(Y2, T2, S2, np.ones((3, 1)), E2, alpha=1)
    with pytest.raises(ValueError):
        plug_in_mean(np.zeros((0, 2)))


# plug-in mean


def test_constant_predictions():
    r = plug_in_mean(np.full((5, 2), 3.5))
    np.testing.assert_array_equal(r.estimate, [3.5, 3.5])
    np.testing.assert_array_equal(r.variance, [0.0, 0.0])


def test_single_prediction_is_degenerate():
    r = plug_in_mean(np.array([[4.0, -1.0]]))
    assert r.degenerate and r.n == 1
    np.testing.assert_array_equal(r.estimate, [4.0, -1.0])
    np.testing.assert_array_equal(r.ci_lower, r.ci_upper)


# influence variance


def test_identical_rows_have_zero_variance():
    est, var, lo, hi = influence_variance(np.full((4, 2), 1.5))
    np.testing.assert_array_equal(var, 0.0)
    np.testing.assert_array_equal(lo, hi)


def test_two_rows_hand_computation():
    est, var, lo, hi = influence_variance([-1.0, 1.0])
    assert est[0] == 0.0 and var[0] == 0.5
    assert hi[0] == pytest.approx(1.959963984540054 * np.sqrt(0.5), abs=1e-12)
    assert hi[0] == pytest.approx(1.386, abs=1e-3)


def test_influence_needs_two_rows():
    with pytest.raises(ValueError):
        influence_variance([1.0])


@settings(max_examples=50, deadline=None)
@given(rows=arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 3)), elements=st.floats(-1e3, 1e3)),
       level=st.sampled_from([0.8, 0.9, 0.95, 0.99]))
def test_ci_brackets_estimate(rows, level):
    est, var, lo, hi = influence_variance(rows, level)
    assert np.all(lo <= est) and np.all(est <= hi) and np.all(var >= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_estimators_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = 20
    y, m = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    t, s = rng.integers(0, 3, n), rng.integers(0, 2, n)
    e = rng.uniform(0.1, 1.0, n)
    perm = rng.permutation(n)
    a = robust_ate(y, t, s, m, e, alpha=1)
    b = robust_ate(y[perm], t[perm], s[perm], m[perm], e[perm], alpha=1)
    np.testing.assert_allclose(a.estimate, b.estimate, atol=1e-12)
    np.testing.assert_allclose(a.variance, b.variance, atol=1e-12)
    np.testing.assert_allclose(plug_in_mean(m).estimate, plug_in_mean(m[perm]).estimate, atol=1e-12)


# covariate-specific


def test_single_stratum_covariate_estimate_equals_robust():
    rng = np.random.default_rng(2)
    y, m = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    t = rng.integers(0, 2, 12)
    e = rng.uniform(0.2, 0.9, 12)
    a = robust_ate(y, t, np.zeros(12, int), m, e, alpha=1)
    b = robust_ate_covariate(y, t, np.zeros(12, int), m, e, alpha=1, c=0)
    np.testing.assert_array_equal(a.estimate, b.estimate)
    assert b.covariate == 0


def test_covariate_stratum_of_treated_sample():
    r = robust_ate_covariate(Y2, T2, S2, M2, E2, alpha=1, c=0)
    assert r.estimate[0] == pytest.approx(3.0) and r.degenerate
    with pytest.raises(ValueError, match="no observations"):
        robust_ate_covariate(Y2, T2, S2, M2, E2, alpha=1, c=5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n_strata=st.integers(1, 5))
def test_covariate_estimates_recombine(seed, n_strata):
    rng = np.random.default_rng(seed)
    n = 60
    s = np.arange(n) % n_strata
    y, m = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    t = rng.integers(0, 2, n)
    e = rng.uniform(0.05, 1.0, n)
    whole = robust_ate(y, t, s, m, e, alpha=0).estimate
    parts = [robust_ate_covariate(y, t, s, m, e, alpha=0, c=c) for c in range(n_strata)]
    assert np.max(np.abs(recombine(parts) - whole)) <= 1e-12


# unbiasedness with exact nuisances


def lg_truth_inputs(n, seed, alpha=1):
    spec = linear_gaussian_spec(0)
    d = ArrayData.from_samples(generate_dataset(spec, n, seed), spec.covariate_cards)
    p = spec.params
    m = d.z_true @ p["mix"].T + p["effects"][:, alpha]
    e = p["propensity"][d.strata, d.t]
    return spec, d, m, e


def test_exact_nuisances_are_unbiased():
    spec, _, _, _ = lg_truth_inputs(10, 0)
    truth = true_marginal(spec, 1).value
    z = []
    for rep in range(40):
        _, d, m, e = lg_truth_inputs(500, 100 + rep)
        r = robust_ate(d.y, d.t, d.strata, m, e, alpha=1)
        z.append((r.estimate - truth) / r.se)
    z = np.array(z)
    # mean of 40 standardized errors has sd ~ 1/sqrt(40)
    assert np.all(np.abs(z.mean(axis=0)) < 3 / np.sqrt(40))


def test_zeroed_outcome_model_remains_consistent():
    spec, d, m, e = lg_truth_inputs(20_000, 3)
    r = robust_ate(d.y, d.t, d.strata, np.zeros_like(m), e, alpha=1)
    assert np.all(np.abs(r.estimate - true_marginal(spec, 1).value) < 3 * r.se)


# predictions and serialization


def small_model():
    cfg = ModelConfig(outcome_dim=2, latent_dim=2, treatment=TreatmentSpace("categorical", levels=3),
                      covariate_cards=[2], hidden=4, depth=1, embed_dim=2)
    return VciModel(cfg, seed=0, dtype=np.float64)


def test_deterministic_predictions_decode_latent_mean():
    model = small_model()
    rng = np.random.default_rng(0)
    y, t, x = rng.normal(size=(6, 2)), rng.integers(0, 3, 6), rng.integers(0, 2, (6, 1))
    m = predict_potential_outcomes(model, y, t, x, alpha=2, deterministic=True)
    np.testing.assert_array_equal(m, model.counterfactual(y, t, x, np.full(6, 2)))
    with pytest.raises(ValueError, match="rng"):
        predict_potential_outcomes(model, y, t, x, alpha=2)
    a = predict_potential_outcomes(model, y, t, x, 2, rng=np.random.default_rng(1))
    b = predict_potential_outcomes(model, y, t, x, 2, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, m)


def test_prediction_file_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(5, 3))
    write_predictions(tmp_path / "p.jsonl", m)
    np.testing.assert_array_equal(read_predictions(tmp_path / "p.jsonl", 5), m)


def test_missing_prediction_index(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"index": 0, "m": [1.0]}\n{"index": 2, "m": [1.0]}\n')
    with pytest.raises(ValueError, match="index 1"):
        read_predictions(path, 3)


def test_report_serialization():
    r = robust_ate(Y2, T2, S2, M2, E2, alpha=1)
    back = EstimatorReport.from_dict(json.loads(r.to_json()))
    np.testing.assert_array_equal(back.estimate, r.estimate)
    assert back.n == 2 and back.estimator == "robust"
    lines = reports_csv([r, plug_in_mean(M2)]).splitlines()
    assert lines[0] == "estimator,dim,estimate,variance,ci_lower,ci_upper"
    assert lines[1].startswith("robust,0,2.25,")
    assert lines[2].startswith("plug_in_mean,0,1.25,")
