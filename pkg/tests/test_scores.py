import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ateavg.scores import (
    aipw_point_and_var,
    aipw_scores,
    clip_propensity,
    nearest_neighbor_match,
    tmle_score_mean,
    tmle_target,
)
from ateavg.simulation import generate_scenario


def test_aipw_single_observation():
    psi = aipw_scores(np.array([2.0]), np.array([1.0]), np.array([1.0]), np.array([0.0]), np.array([0.5]))
    assert psi[0] == 3.0


def test_aipw_perfect_outcome_model(rng):
    Y = rng.standard_normal(20)
    T = rng.integers(0, 2, 20).astype(float)
    theta, _ = aipw_point_and_var(Y, T, Y, Y, rng.uniform(0.1, 0.9, 20))
    assert theta == 0.0


def test_aipw_sigma_is_sd_over_root_n(rng):
    Y, T = rng.standard_normal(30), rng.integers(0, 2, 30).astype(float)
    mu1, mu0, e = rng.standard_normal(30), rng.standard_normal(30), rng.uniform(0.2, 0.8, 30)
    psi = mu1 - mu0 + T * (Y - mu1) / e - (1 - T) * (Y - mu0) / (1 - e)
    theta, sigma = aipw_point_and_var(Y, T, mu1, mu0, e)
    assert abs(theta - psi.mean()) < 1e-14
    assert abs(sigma - psi.std() / np.sqrt(30)) < 1e-14


def test_aipw_rejects_unclipped():
    with pytest.raises(ValueError, match="clip"):
        aipw_scores(np.zeros(2), np.array([0, 1.0]), np.zeros(2), np.zeros(2), np.array([0.0, 0.5]))


def test_clip_counts():
    e, moved = clip_propensity(np.array([0.0, 0.01, 0.5, 0.99, 1.0]), 0.025)
    np.testing.assert_allclose(e, [0.025, 0.025, 0.5, 0.975, 0.975])
    assert moved == 4


def test_oracle_nuisances_recover_truth():
    d = generate_scenario("S1", seed=5, n=5000)
    o = d.oracle
    theta, _ = aipw_point_and_var(d.dataset.Y, d.dataset.T, o.mu1, o.mu0, clip_propensity(o.propensity, 0.025)[0])
    assert abs(theta - 1) < 0.05


def test_tmle_hand_example():
    theta, sigma, eps = tmle_target(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.zeros(2), np.zeros(2),
                                    np.full(2, 0.5))
    assert abs(eps - 0.25) < 1e-15
    assert abs(theta - 1.0) < 1e-15


def test_tmle_perfect_outcome_model(rng):
    T = rng.integers(0, 2, 25).astype(float)
    mu1, mu0 = rng.standard_normal(25), rng.standard_normal(25)
    Y = np.where(T == 1, mu1, mu0)
    theta, _, eps = tmle_target(Y, T, mu1, mu0, rng.uniform(0.1, 0.9, 25))
    assert eps == 0.0
    assert abs(theta - np.mean(mu1 - mu0)) < 1e-14


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 200))
def test_tmle_score_is_zero(seed, n):
    rng = np.random.default_rng(seed)
    T = rng.integers(0, 2, n).astype(float)
    T[0] = 1
    Y = rng.standard_normal(n) * 5
    mu1, mu0 = rng.standard_normal(n), rng.standard_normal(n)
    e = rng.uniform(0.025, 0.975, n)
    _, sigma, eps = tmle_target(Y, T, mu1, mu0, e)
    assert tmle_score_mean(Y, T, mu1, mu0, e, eps) <= 1e-10
    assert sigma >= 0


def test_tmle_degenerate():
    with pytest.raises(ValueError):
        tmle_target(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))


def test_match_simple():
    S = np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]])
    table = nearest_neighbor_match(S, np.array([1, 0, 0]), k=1)
    assert table.matches[0, 0] == 1
    np.testing.assert_array_equal(table.counts, [2, 1, 0])


def test_match_tie_goes_to_lower_index():
    S = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    table = nearest_neighbor_match(S, np.array([1, 0, 0]), k=1)
    assert table.matches[0, 0] == 1


def test_match_brute_force(rng):
    S = rng.standard_normal((30, 2)) * [1, 5]
    T = np.r_[np.ones(12), np.zeros(18)]
    rng.shuffle(T)
    table = nearest_neighbor_match(S, T, k=2)
    Z = S / S.std(axis=0, ddof=1)
    counts = np.zeros(30, dtype=int)
    for i in range(30):
        best = []
        for j in range(30):
            if T[j] != T[i]:
                best.append((np.sum((Z[i] - Z[j]) ** 2), j))
        chosen = [j for _, j in sorted(best)[:2]]
        assert list(table.matches[i]) == chosen
        for j in chosen:
            counts[j] += 1
    np.testing.assert_array_equal(table.counts, counts)
