"""Linear and logistic regression: OLS, IRLS maximum likelihood, lasso and CV penalty selection.

Lasso problems are solved by cyclic coordinate descent (see ``_cd``) with the
glmnet scaling: ``(1/2n) * sum(loss) + lam * sum(pf_j * |beta_j|)`` where the
loss is squared error (gaussian) or deviance (binomial). Intercepts are never
penalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from . import _cd
from .dataset import balanced_folds, random_folds
from .exceptions import RankDeficientError, SeparationError, SolverError
from .rng import make_rng

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"

TOL = 1e-8
MAX_FULL_CYCLES = 10_000
MAX_PASSES = 200_000
MAX_IRLS = 100
MIN_IRLS_WEIGHT = 1e-5
SEPARATION_BOUND = 30.0
# a path stops once the training fit explains this fraction of the null deviance
SATURATION = 0.999


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    coefficients: np.ndarray
    family: str = GAUSSIAN
    lam: float = 0.0
    objective: float = 0.0
    std_errors: np.ndarray | None = None
    intercept_se: float | None = None
    n_iter: int = 0
    selected: np.ndarray = field(init=False)

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "selected", np.flatnonzero(coef != 0))
        if not np.isfinite(self.objective):
            raise SolverError("fit produced a non-finite objective")

    def linear_predictor(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[1] == 0:
            return np.full(X.shape[0], self.intercept)
        return self.intercept + X @ self.coefficients

    def predict(self, X):
        """Fitted mean: identity link for gaussian, probability for binomial."""
        eta = self.linear_predictor(X)
        return expit(eta) if self.family == BINOMIAL else eta


@dataclass(frozen=True)
class CvResult:
    lambda_grid: np.ndarray
    cv_error: np.ndarray
    lambda_min: float
    folds: int
    fit: LinearFit
    fold_of: np.ndarray

    @property
    def index_min(self):
        return int(np.flatnonzero(self.lambda_grid == self.lambda_min)[0])


def soft_threshold(z, t):
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return float(np.sign(z) * max(abs(z) - t, 0.0))


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def fit_ols(X, y, robust=False, names=None):
    """Least squares with an intercept.

    Standard errors are classical, or HC1 heteroskedasticity-robust when
    ``robust`` is set. Raises :class:`RankDeficientError` naming the collinear
    columns when ``[1, X]`` is rank deficient.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    k = p + 1
    if k >= n:
        raise RankDeficientError(f"need more rows than columns (n={n}, columns incl. intercept={k})")
    _, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > diag[0] * max(n, k) * np.finfo(float).eps))
    if rank < k:
        labels = ["intercept"] + list(names if names is not None else [f"X{j + 1}" for j in range(p)])
        bad = [labels[c] for c in piv[rank:]]
        raise RankDeficientError(f"design is rank deficient; collinear columns: {', '.join(bad)}", bad)
    Q, R = np.linalg.qr(A)
    coef = linalg.solve_triangular(R, Q.T @ y)
    resid = y - A @ coef
    Rinv = linalg.solve_triangular(R, np.eye(k))
    if robust:
        U = Q * resid[:, None]
        cov = Rinv @ (U.T @ U) @ Rinv.T * (n / (n - k))
    else:
        s2 = resid @ resid / (n - k)
        cov = s2 * (Rinv @ Rinv.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return LinearFit(
        intercept=float(coef[0]),
        coefficients=coef[1:],
        family=GAUSSIAN,
        lam=0.0,
        objective=float(resid @ resid / (2 * n)),
        std_errors=se[1:],
        intercept_se=float(se[0]),
    )


def _logistic_nll(eta, y):
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def fit_logistic_mle(X, y, tol=TOL, max_iter=MAX_IRLS):
    """Unpenalized logistic regression by IRLS with step halving.

    Raises :class:`SeparationError` when coefficients diverge (beyond 30 on the
    standardized scale) or the information matrix becomes singular.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    if p + 1 >= n:
        raise RankDeficientError(f"need more rows than columns (n={n}, columns incl. intercept={p + 1})")
    sd = X.std(axis=0, ddof=1) if p else np.zeros(0)
    beta = np.zeros(p + 1)
    ybar = y.mean()
    if 0 < ybar < 1:
        beta[0] = np.log(ybar / (1 - ybar))
    eta = A @ beta
    obj = _logistic_nll(eta, y)
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        w = mu * (1 - mu)
        info = A.T @ (A * w[:, None])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(info, A.T @ (y - mu), assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            raise SeparationError("information matrix is singular; classes may be separable") from None
        new = beta + step
        for _ in range(30):
            new_obj = _logistic_nll(A @ new, y)
            if new_obj <= obj + 1e-12 * (1 + abs(obj)):
                break
            new = 0.5 * (new + beta)
        change = np.max(np.abs(new - beta))
        beta, obj = new, new_obj
        eta = A @ beta
        if p and np.max(np.abs(beta[1:] * sd)) > SEPARATION_BOUND:
            raise SeparationError("logistic coefficients diverged; classes appear separable")
        if change < tol:
            break
    else:
        raise SeparationError(f"IRLS did not converge in {max_iter} iterations")
    mu = expit(eta)
    info = A.T @ (A * (mu * (1 - mu))[:, None])
    try:
        se = np.sqrt(np.diag(linalg.inv(info)))
    except linalg.LinAlgError:
        se = np.full(p + 1, np.nan)
    return LinearFit(
        intercept=float(beta[0]),
        coefficients=beta[1:],
        family=BINOMIAL,
        lam=0.0,
        objective=obj,
        std_errors=se[1:],
        intercept_se=float(se[0]),
        n_iter=it,
    )


def _penalty_factor(pf, p):
    if pf is None:
        return np.ones(p)
    pf = np.asarray(pf, dtype=float)
    if pf.shape != (p,) or np.any(pf < 0):
        raise ValueError("penalty_factor must be a nonnegative vector of length p")
    return pf


class _Problem:
    """A centered design plus warm-start state for one lasso path."""

    def __init__(self, X, y, family, pf):
        X = _as_2d(X)
        self.n, self.p = X.shape
        self.family = family
        self.y = np.asarray(y, dtype=float)
        if family == BINOMIAL and not np.all(np.isin(self.y, (0.0, 1.0))):
            raise ValueError("binomial response must be 0/1")
        self.xm = X.mean(axis=0)
        self.Xc = np.asfortranarray(X - self.xm)
        self.pf = _penalty_factor(pf, self.p)
        self.beta = np.zeros(self.p)
        if family == GAUSSIAN:
            self.b0 = float(self.y.mean())
            self.r = self.y - self.b0
        else:
            ybar = self.y.mean()
            self.b0 = float(np.log(ybar / (1 - ybar))) if 0 < ybar < 1 else 0.0
        self.w = np.ones(self.n)
        self.null_dev = self._deviance_at(np.full(self.n, self._null_eta()))

    def _null_eta(self):
        ybar = self.y.mean()
        if self.family == GAUSSIAN:
            return ybar
        return np.log(ybar / (1 - ybar)) if 0 < ybar < 1 else 0.0

    def _deviance_at(self, eta):
        if self.family == GAUSSIAN:
            return float(np.sum((self.y - eta) ** 2))
        return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - self.y * eta))

    def eta(self):
        return self.b0 + self.Xc @ self.beta

    def solve(self, lam, tol=TOL):
        """Solve at ``lam`` starting from the current state; returns (status, iterations)."""
        if np.all(self.pf > 0) and lam >= self._lam_max_cached():
            # the null model is optimal; avoid rounding noise in the gradient sums
            self.beta[:] = 0.0
            self.b0 = float(self._null_eta())
            if self.family == GAUSSIAN:
                self.r = self.y - self.b0
            return _cd.OK, 0
        if self.family == GAUSSIAN:
            b0, full, passes, status = _cd.weighted_lasso_cd(
                self.Xc, self.w, self.pf, float(lam), self.beta, self.b0, self.r, tol, MAX_FULL_CYCLES, MAX_PASSES
            )
            self.b0 = b0
            return status, full
        b0, outer, passes, status = _cd.logistic_lasso_irls(
            self.Xc, self.y, self.pf, float(lam), self.beta, self.b0, tol, MAX_IRLS, MAX_FULL_CYCLES, MAX_PASSES,
            MIN_IRLS_WEIGHT,
        )
        self.b0 = b0
        return status, outer

    def gradient(self):
        """Gradient of the smooth part of the objective w.r.t. the coefficients."""
        eta = self.eta()
        mu = eta if self.family == GAUSSIAN else expit(eta)
        return -(self.Xc.T @ (self.y - mu)) / self.n

    def _lam_max_cached(self):
        if not hasattr(self, "_lmax"):
            self._lmax = self.lambda_max()
        return self._lmax

    def lambda_max(self):
        pen = self.pf > 0
        if not pen.any():
            return 0.0
        if (~pen).any():
            # fit the unpenalized columns alone before measuring the gradient
            state = (self.beta.copy(), self.b0, getattr(self, "r", None))
            self.solve(1e300)
            g = self.gradient()
            self.beta, self.b0 = state[0], state[1]
            if state[2] is not None:
                self.r = state[2]
        else:
            g = -(self.Xc.T @ (self.y - self.y.mean())) / self.n
        return float(np.max(np.abs(g[pen]) / self.pf[pen]))

    def objective(self, lam):
        eta = self.eta()
        pen = lam * float(np.sum(self.pf * np.abs(self.beta)))
        return self._deviance_at(eta) / (2 * self.n) + pen

    def to_fit(self, lam, n_iter=0):
        coef = self.beta.copy()
        return LinearFit(
            intercept=float(self.b0 - self.xm @ coef),
            coefficients=coef,
            family=self.family,
            lam=float(lam),
            objective=self.objective(lam),
            n_iter=n_iter,
        )

    def saturated(self):
        if self.null_dev <= 0:
            return True
        return 1.0 - self._deviance_at(self.eta()) / self.null_dev > SATURATION


def lambda_max(X, y, family=GAUSSIAN, penalty_factor=None):
    """Smallest penalty at which every penalized coefficient is zero."""
    return _Problem(X, y, family, penalty_factor).lambda_max()


def _duality_gap(prob, lam):
    # gaussian only: dual point from the scaled residual
    r = prob.y - prob.eta()
    corr = np.abs(prob.Xc.T @ r) / prob.n
    pen = prob.pf > 0
    scale = min(1.0, lam / max(np.max(corr[pen] / prob.pf[pen]), 1e-300)) if pen.any() else 1.0
    nu = scale * r
    yc = prob.y - prob.y.mean()
    primal = prob.objective(lam)
    dual = (yc @ yc - (yc - nu) @ (yc - nu)) / (2 * prob.n)
    return primal - dual


def fit_lasso(X, y, family=GAUSSIAN, lam=1.0, penalty_factor=None, tol=TOL):
    """Single-penalty lasso fit; raises :class:`SolverError` on non-convergence."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    prob = _Problem(X, y, family, penalty_factor)
    status, it = prob.solve(lam, tol)
    if status == _cd.OBJ_INCREASE:
        raise SolverError("coordinate descent objective increased between cycles")
    if status != _cd.OK:
        msg = f"lasso did not converge within {MAX_FULL_CYCLES} cycles at lam={lam:g}"
        if family == GAUSSIAN:
            msg += f" (duality gap {_duality_gap(prob, lam):.3e})"
        raise SolverError(msg)
    return prob.to_fit(lam, it)


def kkt_residual(fit: LinearFit, X, y, penalty_factor=None):
    """Largest violation of the lasso optimality conditions at ``fit``.

    Active coefficients need ``grad_j = -lam * pf_j * sign(beta_j)``; inactive
    ones need ``|grad_j| <= lam * pf_j``.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    pf = _penalty_factor(penalty_factor, X.shape[1])
    mu = fit.predict(X)
    grad = -(X.T @ (y - mu)) / n
    beta = fit.coefficients
    t = fit.lam * pf
    active = beta != 0
    viol = np.where(active, np.abs(grad + t * np.sign(beta)), np.maximum(np.abs(grad) - t, 0.0))
    intercept_grad = abs(np.mean(y - mu))
    return float(max(viol.max(initial=0.0), intercept_grad))


def lambda_grid(lam_max, n_lambda=100, ratio=1e-3):
    if lam_max <= 0:
        raise SolverError("lambda_max is zero; response has no variation explained by any column")
    return np.geomspace(lam_max, lam_max * ratio, n_lambda)


def lasso_path(X, y, family, lambdas, penalty_factor=None, stop=None):
    """Warm-started fits along a decreasing grid.

    Returns ``(intercepts, coefs, problem)``. Once the training fit saturates
    (deviance ratio above ``SATURATION``) or a solve fails to converge, the
    remaining grid points reuse the last converged solution. ``stop`` truncates
    the path after that index.
    """
    prob = _Problem(X, y, family, penalty_factor)
    L = len(lambdas) if stop is None else stop + 1
    intercepts = np.empty(L)
    coefs = np.empty((L, prob.p))
    frozen = False
    for k in range(L):
        if not frozen:
            status, _ = prob.solve(lambdas[k])
            if status == _cd.OBJ_INCREASE:
                raise SolverError("coordinate descent objective increased between cycles")
            if status == _cd.OK:
                intercepts[k] = prob.b0 - prob.xm @ prob.beta
                coefs[k] = prob.beta
                frozen = prob.saturated()
                continue
            if k == 0:
                raise SolverError(f"lasso path failed to converge at lam={lambdas[k]:g}")
            frozen = True
        intercepts[k] = intercepts[k - 1]
        coefs[k] = coefs[k - 1]
    return intercepts, coefs, prob


def _loss(y, eta, family):
    if family == GAUSSIAN:
        return (y - eta) ** 2
    return 2.0 * (np.logaddexp(0.0, eta) - y * eta)


def select_lambda_cv(X, y, family=GAUSSIAN, K=10, seed=0, penalty_factor=None, n_lambda=100, ratio=1e-3):
    """K-fold cross-validated lasso over a log-spaced grid; refits at the minimizing penalty.

    Binomial folds are stratified so each fold contains both classes; if the
    rarer class has fewer than ``K`` members the fold count is reduced to match.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    rng = make_rng(seed)
    if family == BINOMIAL:
        K = min(K, int(min(y.sum(), n - y.sum())))
        if K < 2:
            raise SolverError("binomial response has fewer than 2 units in one class")
        fold_of = balanced_folds(y, K, rng)
    else:
        K = min(K, n)
        fold_of = random_folds(n, K, rng)
    lams = lambda_grid(lambda_max(X, y, family, penalty_factor), n_lambda, ratio)
    total = np.zeros(len(lams))
    for k in range(1, K + 1):
        test = fold_of == k
        train = ~test
        b0, B, _ = lasso_path(X[train], y[train], family, lams, penalty_factor)
        eta = b0[:, None] + B @ X[test].T
        total += _loss(y[test][None, :], eta, family).sum(axis=1)
    cv_error = total / n
    i = int(np.argmin(cv_error))
    b0, B, prob = lasso_path(X, y, family, lams, penalty_factor, stop=i)
    fit = LinearFit(
        intercept=float(b0[i]),
        coefficients=B[i].copy(),
        family=family,
        lam=float(lams[i]),
        objective=_objective_raw(X, y, family, b0[i], B[i], lams[i], prob.pf),
    )
    return CvResult(lambda_grid=lams, cv_error=cv_error, lambda_min=float(lams[i]), folds=K, fit=fit, fold_of=fold_of)


def _objective_raw(X, y, family, b0, beta, lam, pf):
    eta = b0 + X @ beta
    return float(_loss(y, eta, family).sum() / (2 * len(y)) + lam * np.sum(pf * np.abs(beta)))
