import numpy as np
import pytest

from ateavg.dataset import Dataset
from ateavg.estimators import (
    EstimatorOutput,
    EstimatorSettings,
    Method,
    NuisanceCache,
    estimate_ate,
    estimate_many,
)
from ateavg.exceptions import EstimationError
from ateavg.scores import aipw_point_and_var, clip_propensity
from ateavg.simulation import generate_scenario

SYMMETRIC_EXACT = [Method.DOUBLE_PS, Method.DR_LASSO, Method.DML, Method.DML_PS, Method.TMLE, Method.TMLE_SCREEN]


@pytest.fixture(scope="module")
def fixed_data():
    return generate_scenario("S1", seed=21, n=120, p=40).dataset


@pytest.fixture(scope="module")
def fixed_outputs(fixed_data):
    out, failures = estimate_many(fixed_data)
    assert not failures
    return {o.method: o for o in out}


def test_method_names_are_stable():
    assert [m.value for m in Method] == [
        "double_ps", "debiasing", "dr_lasso", "drme", "tmle", "tmle_screen", "dml", "dml_ps"]
    assert Method.parse("all") == list(Method)
    assert Method.parse("dml, tmle") == [Method.DML, Method.TMLE]
    with pytest.raises(ValueError, match="unknown method"):
        Method.parse("lasso")


@pytest.mark.parametrize("kwargs", [dict(cv_folds=1), dict(propensity_clip=0.5), dict(zeta=0.0),
                                    dict(screen_cap=0), dict(match_count=0)])
def test_settings_validation(kwargs):
    with pytest.raises(ValueError):
        EstimatorSettings(**kwargs)


def test_output_validation():
    with pytest.raises(ValueError):
        EstimatorOutput(Method.DML, 1.0, 0.0)
    with pytest.raises(ValueError):
        EstimatorOutput(Method.DML, np.nan, 1.0)


def test_all_methods_finite(fixed_outputs):
    assert set(fixed_outputs) == set(Method)
    for o in fixed_outputs.values():
        assert np.isfinite(o.theta_hat) and o.sigma_hat > 0
        assert "seconds" in o.diagnostics


def test_deterministic(fixed_data, fixed_outputs):
    again, _ = estimate_many(fixed_data)
    for o in again:
        assert o.theta_hat == fixed_outputs[o.method].theta_hat
        assert o.sigma_hat == fixed_outputs[o.method].sigma_hat


def test_single_call_matches_shared_cache(fixed_data, fixed_outputs):
    for m in (Method.DR_LASSO, Method.DRME):
        assert estimate_ate(fixed_data, m).theta_hat == fixed_outputs[m].theta_hat


def test_location_equivariance(fixed_data, fixed_outputs):
    shifted, _ = estimate_many(fixed_data.with_outcome(fixed_data.Y + 7.5))
    for o in shifted:
        assert abs(o.theta_hat - fixed_outputs[o.method].theta_hat) <= 1e-8, o.method


def test_treatment_relabel_antisymmetry(fixed_data, fixed_outputs):
    flipped, _ = estimate_many(fixed_data.with_treatment(1 - fixed_data.T))
    for o in flipped:
        tol = 1e-6 if o.method in SYMMETRIC_EXACT else 1e-3
        assert abs(o.theta_hat + fixed_outputs[o.method].theta_hat) <= tol, o.method


def test_double_ps_exact_when_y_equals_t():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((200, 20))
    T = (rng.random(200) < 0.5).astype(float)
    out = estimate_ate(Dataset(X, T, T.copy()), Method.DOUBLE_PS)
    assert abs(out.theta_hat - 1.0) < 1e-6


def test_tmle_diagnostics_report_clipping(fixed_outputs):
    assert fixed_outputs[Method.TMLE].diagnostics["clipped"] >= 0
    assert fixed_outputs[Method.TMLE_SCREEN].diagnostics["screened"] == 12


def test_screen_cap_setting(fixed_data):
    out = estimate_ate(fixed_data, Method.TMLE_SCREEN, EstimatorSettings(screen_cap=5))
    assert out.diagnostics["screened"] == 5


def test_cross_fitting_needs_enough_units():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 5))
    T = np.zeros(40)
    T[:4] = 1
    d = Dataset(X, T, X[:, 0] + T + rng.standard_normal(40))
    with pytest.raises(EstimationError) as info:
        estimate_ate(d, Method.DML)
    assert info.value.method == Method.DML
    outputs, failures = estimate_many(d, [Method.DML, Method.DOUBLE_PS])
    assert Method.DML in failures and "per arm" in failures[Method.DML]
    assert [o.method for o in outputs] == [Method.DOUBLE_PS]


def test_too_few_units_fail_every_method():
    d = Dataset(np.array([[0.5], [-1.0], [2.0]]), np.array([1, 0, 1]), np.array([1.0, 0.0, 2.0]))
    outputs, failures = estimate_many(d)
    assert outputs == [] and set(failures) == set(Method)


def test_seed_changes_fold_draws(fixed_data):
    a = estimate_ate(fixed_data, Method.DML, EstimatorSettings(seed=1))
    b = estimate_ate(fixed_data, Method.DML, EstimatorSettings(seed=2))
    assert a.theta_hat != b.theta_hat


def test_nuisance_cache_shares_fits(fixed_data):
    c = NuisanceCache(fixed_data, EstimatorSettings())
    assert c.propensity() is c.propensity()
    assert c.arm_outcome(1) is c.arm_outcome(1)


def test_double_robustness_single_seed():
    draw = generate_scenario("S1", seed=0, n=5000)
    d, o = draw.dataset, draw.oracle
    e = clip_propensity(o.propensity, 0.025)[0]
    zeros = np.zeros(d.n)
    theta_ps, _ = aipw_point_and_var(d.Y, d.T, zeros, zeros, e)
    theta_out, _ = aipw_point_and_var(d.Y, d.T, o.mu1, o.mu0, np.full(d.n, 0.5))
    assert abs(theta_ps - 1) < 0.1
    assert abs(theta_out - 1) < 0.1


@pytest.mark.slow
def test_no_confounding_medians_near_truth():
    est = []
    for seed in range(50):
        out, failures = estimate_many(generate_scenario("A1", seed, n=1000, p=10).dataset)
        assert not failures
        est.append([o.theta_hat for o in out])
    med = np.median(np.array(est), axis=0)
    assert np.all(np.abs(med - 1.0) < 0.15), med


@pytest.mark.slow
def test_scenario1_smoke_over_20_seeds():
    for seed in range(20):
        out, failures = estimate_many(generate_scenario("S1", seed).dataset)
        assert not failures, failures
        assert all(np.isfinite(o.theta_hat) and o.sigma_hat > 0 for o in out)
