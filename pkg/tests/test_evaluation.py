import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcilab.evaluation import (
    BoundCheckResult,
    IdentityModel,
    MetricsReport,
    OracleReplay,
    axiomatic_metrics,
    counterfactual_errors,
    counterfactual_mse,
    group_r2,
    hard_components,
    min_gap,
    oracle_consistency_kl,
    oracle_restrictiveness,
    outcome_variance,
    r2_score,
    verify_elbo_discrete,
    verify_implicit_elbo_discrete,
)
from vcilab.models import ModelConfig, VciModel
from vcilab.scm import (
    ArrayData,
    DiscreteScm,
    blob_attributes_batch,
    blob_image_spec,
    generate_dataset,
    linear_gaussian_spec,
    random_discrete_scm,
)


def lg(n=200, seed=0):
    spec = linear_gaussian_spec(0)
    return ArrayData.from_samples(generate_dataset(spec, n, seed), spec.covariate_cards)


def blobs(n=64, seed=0):
    return ArrayData.from_samples(generate_dataset(blob_image_spec(0), n, seed), [])


def lg_model():
    cfg = ModelConfig(outcome_dim=6, latent_dim=4, treatment=linear_gaussian_spec(0).treatment, covariate_cards=[3],
                      hidden=8, depth=1, embed_dim=2)
    return VciModel(cfg, seed=0, dtype=np.float64)


# counterfactual errors


def test_oracle_replay_has_zero_error():
    d = blobs()
    err = counterfactual_errors(OracleReplay(d), d, resolution=16)
    assert err.mse == 0.0
    assert err.attribute_mae == {"thickness": 0.0, "intensity": 0.0}


def test_identity_model_error_is_dataset_statistic():
    d = lg()
    expected = np.mean(np.sum((d.y - d.y_prime_true) ** 2, axis=1) / d.y.shape[1])
    assert counterfactual_mse(IdentityModel(), d) == pytest.approx(expected, rel=1e-12)


def test_identity_model_attribute_error_on_blobs():
    d = blobs()
    th_y, in_y = blob_attributes_batch(d.y, 16)
    th_p, in_p = blob_attributes_batch(d.y_prime_true, 16)
    err = counterfactual_errors(IdentityModel(), d, resolution=16)
    assert err.attribute_mae["thickness"] == pytest.approx(np.mean(np.abs(th_y - th_p)))
    assert err.attribute_mae["intensity"] == pytest.approx(np.mean(np.abs(in_y - in_p)))


def test_factual_treatment_error_is_reconstruction_error():
    d = lg()
    model = lg_model()
    same = ArrayData(d.x, d.strata, d.t, d.t.copy(), d.y, d.z_true, d.y)
    rec = model.reconstruct(d.y, d.t, d.x)
    assert counterfactual_mse(model, same) == float(np.mean((rec - d.y) ** 2))


def test_missing_ground_truth_rejected():
    d = lg()
    d.y_prime_true = None
    with pytest.raises(ValueError):
        counterfactual_errors(IdentityModel(), d)


# R²


def test_group_r2_perfect_and_mean():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(4, 20))
    assert group_r2(truth, truth) == 1.0
    flat = np.tile(truth.mean(axis=1, keepdims=True), (1, 20))
    assert group_r2(flat, truth) == pytest.approx(0.0, abs=1e-12)


def test_group_r2_component_permutation_invariant():
    rng = np.random.default_rng(1)
    truth, pred = rng.normal(size=(3, 30)), rng.normal(size=(3, 30))
    perm = rng.permutation(30)
    assert group_r2(pred[:, perm], truth[:, perm]) == pytest.approx(group_r2(pred, truth), abs=1e-12)


def test_group_r2_errors():
    with pytest.raises(ValueError):
        r2_score([1.0], [1.0])
    with pytest.raises(ValueError):
        group_r2(np.zeros((2, 3)), np.zeros((2, 4)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_r2_never_exceeds_one(seed):
    rng = np.random.default_rng(seed)
    assert r2_score(rng.normal(size=10), rng.normal(size=10)) <= 1.0


def test_hard_components_pick_largest_effects():
    effect = np.array([[0.1, -5.0, 2.0, 0.0], [3.0, 0.0, -0.5, 4.0]])
    np.testing.assert_array_equal(hard_components(effect, 2), [[1, 2], [3, 0]])
    r2 = group_r2(np.zeros((2, 4)), effect, hard_components(effect, 2))
    assert r2 <= 1.0


# oracle disentanglement


def test_constant_encoder_is_consistent():
    d = lg()
    assert oracle_consistency_kl(lambda y, t, x: np.zeros((len(y), 3)), d) == 0.0


def test_treatment_leak_encoder():
    d = lg()
    leak = lambda y, t, x: np.asarray(t, dtype=np.float64).reshape(-1, 1)
    expected = 0.5 * np.mean((d.t - d.t_prime).astype(float) ** 2)
    assert oracle_consistency_kl(leak, d) == pytest.approx(expected, abs=1e-15)
    assert expected > 0


def test_consistency_accepts_model_encoder():
    d = lg()
    assert oracle_consistency_kl(lg_model().encoder, d) > 0


def test_restrictiveness_is_zero_by_construction():
    d, other = lg(seed=0), lg(seed=0)
    other.y = other.y + 1.0
    assert oracle_restrictiveness(lg_model().encoder, d, other) == 0.0
    assert oracle_restrictiveness(lambda y, t, x: np.zeros((len(y), 1)), d, d) == 0.0


def test_restrictiveness_rejects_changed_treatments():
    d, other = lg(seed=0), lg(seed=0)
    other.t = (other.t + 1) % 3
    with pytest.raises(ValueError, match="treatment"):
        oracle_restrictiveness(lg_model().encoder, d, other)


# axiomatic metrics


def test_identity_model_axiomatics():
    d = blobs()
    m = axiomatic_metrics(IdentityModel(), d, cycles=3)
    assert m["composition"] == 0.0 and m["reversibility"] == 0.0
    th, inten = blob_attributes_batch(d.y, 16)
    gap = np.column_stack([th, inten]) - d.t_prime
    assert m["effectiveness"] == pytest.approx(np.mean(gap**2), rel=1e-12)


def test_oracle_replay_is_effective():
    d = blobs()
    m = axiomatic_metrics(OracleReplay(d), d)
    th, inten = blob_attributes_batch(d.y_prime_true, 16)
    assert m["effectiveness"] == pytest.approx(np.mean((np.column_stack([th, inten]) - d.t_prime) ** 2))
    assert m["effectiveness"] < 1e-3


@pytest.mark.parametrize("cycles", [1, 2, 5])
def test_exact_autoencoder_composes_to_zero(cycles):
    d = blobs(16)
    assert axiomatic_metrics(IdentityModel(), d, cycles=cycles)["composition_cycles"] == 0.0
    with pytest.raises(ValueError):
        axiomatic_metrics(IdentityModel(), d, cycles=0)


def test_metrics_report_round_trip():
    r = MetricsReport({"cf_mse": 0.1, "r2": 0.5}, {"0": {"cf_mse": 0.1}})
    assert MetricsReport.from_json(r.to_json()) == r
    with pytest.raises(ValueError):
        MetricsReport({"cf_mse": -1.0})
    with pytest.raises(ValueError):
        MetricsReport({"r2": 1.5})


# bound verification


def degenerate_scm():
    one = np.ones((1, 1))
    return DiscreteScm(np.ones(1), one, one, np.ones((1, 1, 1)))


def test_degenerate_scm_is_tight():
    for verify in (verify_elbo_discrete, verify_implicit_elbo_discrete):
        (r,) = verify(degenerate_scm())
        assert r.lhs == 0.0 and r.rhs == 0.0 and r.gap == 0.0


def test_singleton_latent_is_tight():
    rng = np.random.default_rng(0)
    scm = random_discrete_scm(rng, sizes=(3, 1, 3, 4))
    results = verify_elbo_discrete(scm)
    assert results
    assert max(abs(r.gap) for r in results) < 1e-12


def test_treatment_free_outcomes_in_implicit_bound():
    rng = np.random.default_rng(1)
    scm = random_discrete_scm(rng, sizes=(2, 3, 3, 3))
    p_y_z = scm.p_y_zt[:, :1, :]
    free = DiscreteScm(scm.p_x, scm.p_z_x, scm.p_t_x, np.repeat(p_y_z, 3, axis=1))
    results = verify_implicit_elbo_discrete(free)
    assert min_gap(results) >= -1e-9
    lhs = {}
    for r in results:
        x, t, tp, y, _ = r.assignment
        lhs.setdefault((x, t, y), set()).add(round(r.lhs, 12))
    assert all(len(v) == 1 for v in lhs.values())


def test_recorded_gap_is_lhs_minus_rhs():
    scm = random_discrete_scm(np.random.default_rng(2))
    for r in verify_elbo_discrete(scm) + verify_implicit_elbo_discrete(scm):
        assert abs(r.gap - (r.lhs - r.rhs)) <= 1e-12
        assert isinstance(r, BoundCheckResult) and r.holds


def test_implicit_rows_cover_every_factual_assignment():
    # y' = 0 impossible under t' = 1 must not drop rows
    p_y_zt = np.array([[[0.5, 0.5], [0.0, 1.0]]])
    scm = DiscreteScm(np.ones(1), np.ones((1, 1)), np.array([[0.5, 0.5]]), p_y_zt)
    rows = {r.assignment[:4] for r in verify_implicit_elbo_discrete(scm)}
    assert (0, 0, 1, 0) in rows and (0, 0, 1, 1) in rows


def test_size_cap_is_enforced():
    scm = random_discrete_scm(np.random.default_rng(0), sizes=(2, 5, 2, 2))
    with pytest.raises(ValueError, match="cap"):
        verify_elbo_discrete(scm, max_size=4)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_bounds_hold_on_random_scms(seed):
    scm = random_discrete_scm(np.random.default_rng(seed))
    assert min_gap(verify_elbo_discrete(scm)) >= -1e-9
    assert min_gap(verify_implicit_elbo_discrete(scm)) >= -1e-9


def test_outcome_variance():
    y = np.array([[0.0, 1.0], [2.0, 1.0]])
    assert outcome_variance(y) == pytest.approx(0.5)
