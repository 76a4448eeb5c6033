import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from ateavg import glm
from ateavg.exceptions import RankDeficientError, SeparationError


def _ista_objective(X, y, lam, iters=200_000):
    """Plain proximal gradient on the intercept-augmented gaussian lasso."""
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    step = n / np.linalg.norm(A, 2) ** 2
    b = np.zeros(p + 1)
    for _ in range(iters):
        z = b - step * (-(A.T @ (y - A @ b)) / n)
        b = np.r_[z[0], np.sign(z[1:]) * np.maximum(np.abs(z[1:]) - step * lam, 0)]
    r = y - A @ b
    return r @ r / (2 * n) + lam * np.abs(b[1:]).sum()


@pytest.mark.parametrize("z, t, out", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-2.5, 0.5, -2.0), (0.7, 0.0, 0.7)])
def test_soft_threshold(z, t, out):
    assert glm.soft_threshold(z, t) == out


def test_ols_exact_line():
    x = np.arange(10.0)
    fit = glm.fit_ols(x, 2 * x)
    assert abs(fit.coefficients[0] - 2) < 1e-10
    assert abs(fit.intercept) < 1e-10


def test_ols_orthogonal_response():
    x = np.array([-1.0, 1.0, -1.0, 1.0])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    assert abs(glm.fit_ols(x, y).coefficients[0]) < 1e-10


def test_ols_normal_equations(rng):
    X = rng.standard_normal((50, 3))
    y = rng.standard_normal(50)
    A = np.column_stack([np.ones(50), X])
    direct = np.linalg.solve(A.T @ A, A.T @ y)
    fit = glm.fit_ols(X, y)
    np.testing.assert_allclose(np.r_[fit.intercept, fit.coefficients], direct, atol=1e-8)
    resid = y - A @ direct
    classical = np.sqrt(np.diag(resid @ resid / 46 * np.linalg.inv(A.T @ A)))
    np.testing.assert_allclose(fit.std_errors, classical[1:], rtol=1e-8)
    bread = np.linalg.inv(A.T @ A)
    hc1 = bread @ (A.T * resid**2) @ A @ bread * 50 / 46
    robust = glm.fit_ols(X, y, robust=True)
    np.testing.assert_allclose(robust.std_errors, np.sqrt(np.diag(hc1))[1:], rtol=1e-8)


def test_ols_rank_deficient_names_columns(rng):
    X = rng.standard_normal((20, 3))
    X[:, 2] = X[:, 0] + X[:, 1]
    with pytest.raises(RankDeficientError) as info:
        glm.fit_ols(X, rng.standard_normal(20), names=["a", "b", "c"])
    assert len(info.value.collinear) == 1
    assert info.value.collinear[0] in ("a", "b", "c")


def test_ols_too_many_columns(rng):
    with pytest.raises(RankDeficientError):
        glm.fit_ols(rng.standard_normal((5, 4)), rng.standard_normal(5))


def test_logistic_independent_response():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((1000, 3))
    y = rng.permutation(np.r_[np.ones(500), np.zeros(500)])
    fit = glm.fit_logistic_mle(X, y)
    assert np.all(np.abs(fit.coefficients) < 0.2)
    assert abs(fit.intercept) < 0.2


def test_logistic_two_by_two_table():
    # counts: x=0 -> 30 ones / 50 zeros, x=1 -> 45 ones / 15 zeros
    x = np.r_[np.zeros(80), np.ones(60)]
    y = np.r_[np.ones(30), np.zeros(50), np.ones(45), np.zeros(15)]
    fit = glm.fit_logistic_mle(x, y)
    assert abs(fit.intercept - np.log(30 / 50)) < 1e-6
    assert abs(fit.coefficients[0] - np.log((45 / 15) / (30 / 50))) < 1e-6


def test_logistic_intercept_only():
    y = np.r_[np.ones(7), np.zeros(7)]
    fit = glm.fit_logistic_mle(np.zeros((14, 0)), y)
    assert abs(fit.intercept) < 1e-12


def test_logistic_gradient_vanishes_at_mle(rng):
    X = rng.standard_normal((60, 3))
    y = (rng.random(60) < expit(X @ [1.0, -0.5, 0.2])).astype(float)
    fit = glm.fit_logistic_mle(X, y)
    A = np.column_stack([np.ones(60), X])
    b = np.r_[fit.intercept, fit.coefficients]

    def nll(b):
        eta = A @ b
        return np.sum(np.logaddexp(0, eta) - y * eta)

    analytic = -(A.T @ (y - expit(A @ b)))
    h = 1e-6
    numeric = np.array([(nll(b + h * e) - nll(b - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.max(np.abs(analytic)) <= 1e-6
    np.testing.assert_allclose(numeric, analytic, atol=1e-4)


def test_logistic_separation_detected():
    x = np.linspace(-1, 1, 40)
    with pytest.raises(SeparationError):
        glm.fit_logistic_mle(x, (x > 0).astype(float))


@pytest.mark.parametrize("family", [glm.GAUSSIAN, glm.BINOMIAL])
def test_lambda_max_zeroes_everything(rng, family):
    X = rng.standard_normal((40, 10))
    y = (rng.random(40) < 0.5).astype(float) if family == glm.BINOMIAL else rng.standard_normal(40)
    lmax = glm.lambda_max(X, y, family)
    assert abs(lmax - np.max(np.abs(X.T @ (y - y.mean()))) / 40) < 1e-12
    for lam in (lmax, 2 * lmax):
        fit = glm.fit_lasso(X, y, family, lam)
        assert fit.selected.size == 0
    assert glm.fit_lasso(X, y, family, 0.98 * lmax).selected.size >= 1


def test_lasso_zero_penalty_equals_ols(rng):
    X = rng.standard_normal((60, 5))
    y = X @ rng.standard_normal(5) + rng.standard_normal(60)
    lasso = glm.fit_lasso(X, y, glm.GAUSSIAN, 0.0)
    ols = glm.fit_ols(X, y)
    np.testing.assert_allclose(lasso.coefficients, ols.coefficients, atol=1e-8)
    assert abs(lasso.intercept - ols.intercept) < 1e-8


def test_lasso_matches_proximal_gradient_oracle():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((20, 5))
    y = X @ [1.5, 0, -1, 0, 0.3] + rng.standard_normal(20)
    lam = 0.2
    fit = glm.fit_lasso(X, y, glm.GAUSSIAN, lam)
    assert abs(fit.objective - _ista_objective(X, y, lam)) < 1e-8


def test_gaussian_lasso_frozen_reference():
    # reference solution from an independent coordinate-descent implementation (tol 1e-14)
    rng = np.random.default_rng(11)
    X = rng.standard_normal((40, 8))
    y = X[:, 0] * 2 - X[:, 3] + rng.standard_normal(40)
    fit = glm.fit_lasso(X, y, glm.GAUSSIAN, 0.1)
    ref = [1.680056421784655, 0.25625764851938976, 0.03698535256091435, -1.0626077768200213,
           -0.18395814737381824, 0.005315278558351069, 0.0, 0.1411757469304648]
    np.testing.assert_allclose(fit.coefficients, ref, atol=1e-9)
    assert abs(fit.intercept - 0.22899841682818675) < 1e-9
    assert fit.selected.tolist() == [0, 1, 2, 3, 4, 5, 7]


def test_logistic_lasso_frozen_reference():
    # reference from an independent SAGA solver on the same mean-NLL + l1 objective
    rng = np.random.default_rng(11)
    X = rng.standard_normal((40, 8))
    rng.standard_normal(40)
    y = (X[:, 0] + 0.5 * rng.standard_normal(40) > 0).astype(float)
    fit = glm.fit_lasso(X, y, glm.BINOMIAL, 0.05)
    ref = [2.2386885792144287, -0.004855507177204038, 0.0, 0.0, 0.0, 0.0, 0.0, 0.12455143789854081]
    np.testing.assert_allclose(fit.coefficients, ref, atol=1e-6)
    assert abs(fit.intercept - (-0.04856573328221405)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(10, 60),
    p=st.integers(1, 80),
    frac=st.floats(0.01, 1.0),
    binomial=st.booleans(),
)
def test_kkt_property(seed, n, p, frac, binomial):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if binomial:
        y = (rng.random(n) < expit(X[:, 0])).astype(float)
        y[:2] = [0, 1]
        family = glm.BINOMIAL
    else:
        y = X[:, 0] + rng.standard_normal(n)
        family = glm.GAUSSIAN
    lam = frac * glm.lambda_max(X, y, family)
    if binomial and p >= n:
        # near-separable problems are only posed along a warm-started path
        lam = max(lam, 0.05 * glm.lambda_max(X, y, family))
    fit = glm.fit_lasso(X, y, family, lam)
    assert glm.kkt_residual(fit, X, y) <= 1e-6
    assert np.isfinite(fit.objective)


def test_unpenalized_column_stays_in(rng):
    X = rng.standard_normal((50, 6))
    y = 0.01 * X[:, 2] + rng.standard_normal(50)
    pf = np.r_[1, 1, 0, 1, 1, 1.0]
    lmax = glm.lambda_max(X, y, glm.GAUSSIAN, pf)
    fit = glm.fit_lasso(X, y, glm.GAUSSIAN, lmax, pf)
    assert fit.selected.tolist() == [2]
    assert glm.kkt_residual(fit, X, y, pf) <= 1e-8


def test_path_objective_decreases_in_lambda(rng):
    X = rng.standard_normal((30, 50))
    y = X[:, :3] @ [1, -1, 0.5] + rng.standard_normal(30)
    lams = glm.lambda_grid(glm.lambda_max(X, y), 20, 0.01)
    b0, B, _ = glm.lasso_path(X, y, glm.GAUSSIAN, lams)
    assert B.shape == (20, 50)
    assert np.count_nonzero(B[0]) == 0
    l1 = np.abs(B).sum(axis=1)
    assert np.all(np.diff(l1) >= -1e-10)


def test_lambda_grid_shape():
    g = glm.lambda_grid(2.0)
    assert len(g) == 100
    assert g[0] == 2.0 and abs(g[-1] - 0.002) < 1e-15
    assert np.all(np.diff(g) < 0)


def test_cv_deterministic_and_valid(rng):
    X = rng.standard_normal((80, 20))
    y = X[:, 0] + rng.standard_normal(80)
    a = glm.select_lambda_cv(X, y, glm.GAUSSIAN, K=5, seed=4)
    b = glm.select_lambda_cv(X, y, glm.GAUSSIAN, K=5, seed=4)
    assert a.lambda_min == b.lambda_min
    np.testing.assert_array_equal(a.cv_error, b.cv_error)
    np.testing.assert_array_equal(a.fit.coefficients, b.fit.coefficients)
    assert a.lambda_min in a.lambda_grid
    assert np.all(np.isfinite(a.cv_error))
    assert a.cv_error[a.index_min] == a.cv_error.min()


def test_cv_pure_noise_selects_little():
    sizes = []
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        X = rng.standard_normal((200, 50))
        y = rng.standard_normal(200)
        sizes.append(glm.select_lambda_cv(X, y, glm.GAUSSIAN, seed=seed).fit.selected.size)
    assert np.median(sizes) <= 3


def test_cv_strong_signal_selected():
    hits = 0
    for seed in range(50):
        rng = np.random.default_rng(2000 + seed)
        X = rng.standard_normal((100, 30))
        y = 2 * X[:, 7] + rng.standard_normal(100)
        hits += 7 in glm.select_lambda_cv(X, y, glm.GAUSSIAN, seed=seed).fit.selected
    assert hits >= 48


def test_cv_binomial_reduces_folds_for_rare_class(rng):
    X = rng.standard_normal((40, 5))
    y = np.zeros(40)
    y[:4] = 1
    res = glm.select_lambda_cv(X, y, glm.BINOMIAL, K=10, seed=0)
    assert res.folds == 4
