"""Candidate ATE estimators built on lasso nuisance models.

All estimators assume unconfoundedness, positivity and SUTVA. Positivity is
enforced numerically by clipping fitted propensities into
``[propensity_clip, 1 - propensity_clip]``.

Estimators that need the same nuisance fit (for example the full-sample lasso
propensity model) share it through :class:`NuisanceCache`. Every fit draws its
cross-validation folds from a seed derived from ``settings.seed`` and a fixed
label, so results do not depend on which methods run or in what order. Arm
specific fits use the same label for both arms, which makes relabelling the
treatment an exact symmetry.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit, logit

from . import glm
from .balancing import BalanceProblem, solve_balancing_weights
from .dataset import Dataset, balanced_folds, standardize_columns
from .exceptions import AteError, DataError, EstimationError, RankDeficientError, SolverError
from .rng import derive_seed, make_rng
from .scores import aipw_point_and_var, clip_propensity, nearest_neighbor_match, tmle_target

# leave this many residual degrees of freedom in post-selection refits
REFIT_SLACK = 10


class Method(str, Enum):
    DOUBLE_PS = "double_ps"
    DEBIASING = "debiasing"
    DR_LASSO = "dr_lasso"
    DRME = "drme"
    TMLE = "tmle"
    TMLE_SCREEN = "tmle_screen"
    DML = "dml"
    DML_PS = "dml_ps"

    @property
    def ordinal(self):
        return list(Method).index(self)

    @classmethod
    def parse(cls, names):
        """Parse a comma separated list (or ``all``) into methods."""
        if isinstance(names, str):
            names = [s.strip() for s in names.split(",") if s.strip()]
        if list(names) == ["all"]:
            return list(cls)
        try:
            return [cls(n) for n in names]
        except ValueError:
            raise ValueError(f"unknown method in {names!r}; choose from {', '.join(m.value for m in cls)}") from None

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class EstimatorSettings:
    cv_folds: int = 10
    dml_folds: int = 5
    propensity_clip: float = 0.025
    screen_cap: int | None = None
    zeta: float = 0.5
    match_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.cv_folds < 2 or self.dml_folds < 2:
            raise ValueError("fold counts must be at least 2")
        if not 0 < self.propensity_clip < 0.5:
            raise ValueError("propensity_clip must lie in (0, 0.5)")
        if self.screen_cap is not None and self.screen_cap < 1:
            raise ValueError("screen_cap must be positive")
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        if self.match_count < 1:
            raise ValueError("match_count must be positive")

    def replace(self, **kw):
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class EstimatorOutput:
    method: object
    theta_hat: float
    sigma_hat: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.theta_hat):
            raise ValueError(f"{self.method}: non-finite estimate")
        if not (np.isfinite(self.sigma_hat) and self.sigma_hat > 0):
            raise ValueError(f"{self.method}: standard error must be positive and finite, got {self.sigma_hat}")

    @property
    def label(self):
        return str(self.method)


class NuisanceCache:
    """Standardized data plus memoized cross-validated lasso fits for one dataset."""

    def __init__(self, d: Dataset, s: EstimatorSettings):
        if d.n < 4:
            raise DataError("need at least 4 units to estimate an effect")
        self.raw = d
        self.data, self.scaling = standardize_columns(d)
        self.X = self.data.X
        self.T = self.data.T
        self.Y = self.data.Y
        self.s = s
        self._fits = {}

    @property
    def n(self):
        return self.data.n

    def cv(self, key, seed_label, X, y, family, penalty_factor=None):
        if key not in self._fits:
            seed = derive_seed(self.s.seed, *seed_label)
            self._fits[key] = glm.select_lambda_cv(X, y, family, K=self.s.cv_folds, seed=seed,
                                                   penalty_factor=penalty_factor)
        return self._fits[key]

    def propensity(self):
        return self.cv(("ps",), ("ps",), self.X, self.T, glm.BINOMIAL)

    def arm_outcome(self, t):
        m = self.T == t
        return self.cv(("mu", t), ("mu",), self.X[m], self.Y[m], glm.GAUSSIAN)

    def dml_folds(self):
        if "dml_folds" not in self._fits:
            rng = make_rng(derive_seed(self.s.seed, "dml"))
            self._fits["dml_folds"] = balanced_folds(self.T, self.s.dml_folds, rng)
        return self._fits["dml_folds"]

    def dml_nuisance(self, k):
        """Propensity and per-arm outcome CV fits on the complement of fold ``k``."""
        train = self.dml_folds() != k
        Xtr, Ttr, Ytr = self.X[train], self.T[train], self.Y[train]
        ps = self.cv(("dml_ps", k), ("dml_ps", k), Xtr, Ttr, glm.BINOMIAL)
        mus = {}
        for t in (0, 1):
            m = Ttr == t
            mus[t] = self.cv(("dml_mu", k, t), ("dml_mu", k), Xtr[m], Ytr[m], glm.GAUSSIAN)
        return train, ps, mus


def _cap_selection(coef_sets, cap):
    """Union of selected columns, keeping at most ``cap`` by largest |coefficient|."""
    strength = np.max(np.abs(np.vstack(coef_sets)), axis=0)
    sel = np.flatnonzero(strength != 0)
    if len(sel) > cap:
        order = np.argsort(-strength[sel], kind="stable")
        sel = np.sort(sel[order[:cap]])
    return sel


def _refit_gaussian(X, y, fit, X_pred):
    """OLS on the lasso-selected columns; falls back to the lasso predictions."""
    sel = _cap_selection([fit.coefficients], max(len(y) - REFIT_SLACK, 0))
    try:
        ols = glm.fit_ols(X[:, sel], y)
    except SolverError:
        return fit.predict(X_pred), False
    return ols.predict(X_pred[:, sel]), True


def _refit_logistic(X, y, fit, X_pred):
    """Unpenalized logistic regression on the selected columns; falls back to the lasso."""
    sel = _cap_selection([fit.coefficients], max(len(y) - REFIT_SLACK, 0))
    try:
        mle = glm.fit_logistic_mle(X[:, sel], y)
    except SolverError:
        return fit.predict(X_pred), False
    return expit(mle.linear_predictor(X_pred[:, sel])), True


def _double_ps(c: NuisanceCache):
    fy = c.cv(("y",), ("y",), c.X, c.Y, glm.GAUSSIAN).fit
    ft = c.propensity().fit
    sel = _cap_selection([fy.coefficients, ft.coefficients], c.n - REFIT_SLACK)
    ols = glm.fit_ols(np.column_stack([c.T, c.X[:, sel]]), c.Y, robust=True)
    diag = {"selected_outcome": len(fy.selected), "selected_treatment": len(ft.selected), "selected_union": len(sel)}
    return ols.coefficients[0], ols.std_errors[0], diag


def _debiasing(c: NuisanceCache):
    target = c.X.mean(axis=0)
    mu, var, diag = {}, 0.0, {}
    for t in (0, 1):
        m = c.T == t
        fit = c.arm_outcome(t).fit
        resid = c.Y[m] - fit.predict(c.X[m])
        w, info = solve_balancing_weights(BalanceProblem(c.X[m], target, zeta=c.s.zeta), return_info=True)
        mu[t] = float(fit.predict(target[None, :])[0] + w @ resid)
        var += float(np.sum(w**2 * resid**2))
        diag[f"selected_arm{t}"] = len(fit.selected)
        diag[f"balance_iterations_arm{t}"] = info["iterations"]
    return mu[1] - mu[0], np.sqrt(var), diag


def _propensity_scores(c: NuisanceCache, refit):
    cvps = c.propensity()
    if refit:
        e, ok = _refit_logistic(c.X, c.T, cvps.fit, c.X)
    else:
        e, ok = cvps.fit.predict(c.X), True
    e, n_clip = clip_propensity(e, c.s.propensity_clip)
    return e, n_clip, ok


def _dr_lasso(c: NuisanceCache):
    e, n_clip, ps_refit = _propensity_scores(c, refit=True)
    mu = {}
    refits = 0
    for t in (0, 1):
        m = c.T == t
        mu[t], ok = _refit_gaussian(c.X[m], c.Y[m], c.arm_outcome(t).fit, c.X)
        refits += ok
    theta, sigma = aipw_point_and_var(c.Y, c.T, mu[1], mu[0], e)
    return theta, sigma, {"clipped": n_clip, "propensity_refit": ps_refit, "outcome_refits": refits}


def _fit_ols_columns(S, y):
    """OLS of ``y`` on the columns of ``S``, dropping constant or collinear columns."""
    keep = list(np.flatnonzero(np.ptp(S, axis=0) > 0))
    while True:
        try:
            return glm.fit_ols(S[:, keep], y, names=[str(j) for j in keep]), np.array(keep, dtype=int)
        except RankDeficientError as exc:
            drop = {int(c) for c in exc.collinear if c != "intercept"}
            if not drop or not keep:
                raise
            keep = [j for j in keep if j not in drop]


def _drme(c: NuisanceCache):
    k = c.s.match_count
    e, n_clip, _ = _propensity_scores(c, refit=False)
    lps = logit(e)
    Y, T = c.Y, c.T
    y_hat = {1: Y.copy(), 0: Y.copy()}
    counts = np.zeros(c.n)
    s2 = {}
    for t in (0, 1):
        # impute Y(t) for units in the other arm, matching on (propensity, arm-t prognostic score)
        S = np.column_stack([lps, c.arm_outcome(t).fit.predict(c.X)])
        table = nearest_neighbor_match(S, T, k)
        in_t = T == t
        ols, keep = _fit_ols_columns(S[in_t], Y[in_t])
        m_t = ols.predict(S[:, keep])
        resid = Y[in_t] - m_t[in_t]
        s2[t] = float(resid @ resid / max(in_t.sum() - len(keep) - 1, 1))
        others = np.flatnonzero(~in_t)
        J = table.matches[others]
        y_hat[t][others] = np.mean(Y[J] + m_t[others, None] - m_t[J], axis=1)
        counts[in_t] = table.counts[in_t]
    tau = y_hat[1] - y_hat[0]
    theta = float(tau.mean())
    sig2_i = np.where(T == 1, s2[1], s2[0])
    km = counts / k
    var = (np.sum((tau - theta) ** 2) + np.sum((km**2 + (2 * k - 1) / k * km) * sig2_i)) / c.n**2
    return theta, np.sqrt(var), {"clipped": n_clip, "max_match_count": int(counts.max())}


def _tmle(c: NuisanceCache):
    XT = np.column_stack([c.T, c.X])
    pf = np.r_[0.0, np.ones(c.X.shape[1])]
    fit = c.cv(("y_tx",), ("y_tx",), XT, c.Y, glm.GAUSSIAN, penalty_factor=pf).fit
    mu1 = fit.predict(np.column_stack([np.ones(c.n), c.X]))
    mu0 = fit.predict(np.column_stack([np.zeros(c.n), c.X]))
    e, n_clip, _ = _propensity_scores(c, refit=False)
    theta, sigma, eps = tmle_target(c.Y, c.T, mu1, mu0, e)
    return theta, sigma, {"clipped": n_clip, "epsilon": eps, "selected_outcome": int(np.count_nonzero(fit.coefficients[1:]))}


def _tmle_screen(c: NuisanceCache):
    cap = c.s.screen_cap if c.s.screen_cap is not None else max(c.n // 10, 1)
    cap = min(cap, c.X.shape[1], c.n - REFIT_SLACK)
    Xc = c.X - c.X.mean(axis=0)
    yc = c.Y - c.Y.mean()
    corr = np.abs(Xc.T @ yc) / (np.sqrt(np.sum(Xc**2, axis=0)) * np.sqrt(yc @ yc) + 1e-300)
    sel = np.sort(np.argsort(-corr, kind="stable")[:cap])
    Xs = c.X[:, sel]
    ols = glm.fit_ols(np.column_stack([c.T, Xs]), c.Y)
    mu1 = ols.predict(np.column_stack([np.ones(c.n), Xs]))
    mu0 = ols.predict(np.column_stack([np.zeros(c.n), Xs]))
    try:
        e = glm.fit_logistic_mle(Xs, c.T).predict(Xs)
        ps_fallback = False
    except SolverError:
        e = c.cv(("screen_ps",), ("screen_ps",), Xs, c.T, glm.BINOMIAL).fit.predict(Xs)
        ps_fallback = True
    e, n_clip = clip_propensity(e, c.s.propensity_clip)
    theta, sigma, eps = tmle_target(c.Y, c.T, mu1, mu0, e)
    return theta, sigma, {"clipped": n_clip, "screened": len(sel), "propensity_fallback": ps_fallback, "epsilon": eps}


def _dml(c: NuisanceCache, refit):
    need = max(5, c.s.dml_folds)
    if min(c.data.n_treated, c.data.n_control) < need:
        raise DataError(f"cross-fitting needs at least {need} units per arm")
    folds = c.dml_folds()
    e = np.empty(c.n)
    mu = {0: np.empty(c.n), 1: np.empty(c.n)}
    refits = 0
    for k in range(1, c.s.dml_folds + 1):
        train, ps, mus = c.dml_nuisance(k)
        test = folds == k
        Xtr, Ttr, Ytr = c.X[train], c.T[train], c.Y[train]
        if refit:
            e[test], ok = _refit_logistic(Xtr, Ttr, ps.fit, c.X[test])
            refits += ok
        else:
            e[test] = ps.fit.predict(c.X[test])
        for t in (0, 1):
            m = Ttr == t
            if refit:
                mu[t][test], ok = _refit_gaussian(Xtr[m], Ytr[m], mus[t].fit, c.X[test])
                refits += ok
            else:
                mu[t][test] = mus[t].fit.predict(c.X[test])
    e, n_clip = clip_propensity(e, c.s.propensity_clip)
    theta, sigma = aipw_point_and_var(c.Y, c.T, mu[1], mu[0], e)
    diag = {"clipped": n_clip}
    if refit:
        diag["refits"] = refits
    return theta, sigma, diag


_RECIPES = {
    Method.DOUBLE_PS: _double_ps,
    Method.DEBIASING: _debiasing,
    Method.DR_LASSO: _dr_lasso,
    Method.DRME: _drme,
    Method.TMLE: _tmle,
    Method.TMLE_SCREEN: _tmle_screen,
    Method.DML: lambda c: _dml(c, refit=False),
    Method.DML_PS: lambda c: _dml(c, refit=True),
}


def _run(c: NuisanceCache, m: Method):
    start = time.perf_counter()
    try:
        theta, sigma, diag = _RECIPES[m](c)
        diag["seconds"] = time.perf_counter() - start
        return EstimatorOutput(m, float(theta), float(sigma), diag)
    except (AteError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise EstimationError(m, str(exc)) from exc


def estimate_ate(d: Dataset, m: Method, s: EstimatorSettings | None = None) -> EstimatorOutput:
    """Run one candidate estimator; failures raise :class:`EstimationError`."""
    s = s or EstimatorSettings()
    try:
        cache = NuisanceCache(d, s)
    except DataError as exc:
        raise EstimationError(Method(m), str(exc)) from exc
    return _run(cache, Method(m))


def estimate_many(d: Dataset, methods=None, s: EstimatorSettings | None = None):
    """Run several estimators sharing nuisance fits.

    Returns ``(outputs, failures)``: successful outputs in method order, and a
    mapping from failed method to its error message.
    """
    s = s or EstimatorSettings()
    methods = list(Method) if methods is None else [Method(m) for m in methods]
    outputs, failures = [], {}
    try:
        cache = NuisanceCache(d, s)
    except DataError as exc:
        return [], {m: str(exc) for m in methods}
    for m in methods:
        try:
            outputs.append(_run(cache, m))
        except EstimationError as exc:
            failures[m] = str(exc)
    return outputs, failures
