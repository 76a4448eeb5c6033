"""Data-generating mechanisms for the ten simulation scenarios.

Main scenarios S1-S5 and additional scenarios A1-A5. Every scenario uses
p = 300 covariates and n = 150 units, except the cluster designs S2 and A3
which use n = 300. Outcome noise is standard normal throughout.

Each draw carries an :class:`Oracle` with the true propensity, the noiseless
conditional means and the potential outcomes. It is meant for tests and Monte
Carlo bookkeeping only and is never passed to an estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .dataset import Dataset
from .rng import make_rng

P = 300
N_DEFAULT = 150
N_CLUSTER = 300
RHO = 0.3
N_CLUSTERS = 20
BETA_SQ_NORM = 18.0


class ScenarioId(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"
    A4 = "A4"
    A5 = "A5"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Oracle:
    propensity: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray


@dataclass(frozen=True)
class ScenarioDraw:
    dataset: Dataset
    true_ate: float
    scenario: ScenarioId
    seed: int
    replication: int = 0
    oracle: Oracle | None = field(default=None, repr=False, compare=False)


def true_ate(sid) -> float:
    sid = ScenarioId(sid)
    return 10.0 if sid in (ScenarioId.S2, ScenarioId.A3) else 1.0


def default_n(sid) -> int:
    return N_CLUSTER if ScenarioId(sid) in (ScenarioId.S2, ScenarioId.A3) else N_DEFAULT


def sample_exchangeable_mvn(n, p, rho, seed=None, rng=None):
    """Rows from MVN(0, Sigma) with unit variances and common correlation ``rho >= 0``."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1) for the shared-factor construction")
    rng = rng if rng is not None else make_rng(seed)
    Z = rng.standard_normal((n, p))
    z0 = rng.standard_normal((n, 1))
    return np.sqrt(1 - rho) * Z + np.sqrt(rho) * z0


def _sparse(p, head):
    v = np.zeros(p)
    v[: len(head)] = head
    return v


def _normalized(v, sq_norm=BETA_SQ_NORM):
    return v * np.sqrt(sq_norm / (v @ v))


def _s3_beta(p):
    alternating = np.tile([0.15, -0.15], 36)
    return _sparse(p, np.r_[0.2, 0.3, alternating])


_S1_BETA = (0.75, 1, 0.6, -0.8, -0.7)
_S1_GAMMA = (0.15, 0.2, 0, 0, -0.4)
_S3_GAMMA = (0.6, -0.5)
_S5_GAMMA = (0.2, 0, 0.4, -0.5)
_A2_BETA = (0.9, 0.9, 0.2, 0.2, 0, 0, 0.9, 0.9)
_A2_GAMMA = (0.4, 0.9, -0.5, -0.7, -0.3, 0.6)


def _nonlinear_outcome(X, t):
    return -2 + t + 0.5 * X[:, 0] + 0.5 * X[:, 1] ** 2 + 0.8 * X[:, 1] ** 3 + 0.3 * np.exp(X[:, 2])


def _a4_propensity(X):
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    return expit(0.5 * x1**3 + 0.3 * x1**2 - 0.3 * x2**4 + 0.4 * x3**2)


def _exchangeable_design(sid, X):
    """(propensity, mean function of (X, t)) for the exchangeable-covariate scenarios."""
    p = X.shape[1]
    if sid == ScenarioId.S1:
        beta, e = _sparse(p, _S1_BETA), norm.cdf(X @ _sparse(p, _S1_GAMMA))
    elif sid == ScenarioId.A1:
        beta, e = np.zeros(p), np.full(X.shape[0], 0.5)
    elif sid == ScenarioId.A2:
        beta, e = _sparse(p, _A2_BETA), norm.cdf(X @ _sparse(p, _A2_GAMMA))
    elif sid == ScenarioId.A4:
        beta, e = _sparse(p, _S1_BETA), _a4_propensity(X)
    elif sid == ScenarioId.S3:
        beta, e = _s3_beta(p), norm.cdf(X @ _sparse(p, _S3_GAMMA))
    elif sid == ScenarioId.S4:
        return norm.cdf(X @ _sparse(p, _S3_GAMMA)), _nonlinear_outcome
    elif sid == ScenarioId.A5:
        return _a4_propensity(X), _nonlinear_outcome
    elif sid == ScenarioId.S5:
        e = norm.cdf(-0.7 + X @ _sparse(p, _S5_GAMMA))
        return e, lambda X, t: -2 + t + 0.5 * X[:, 0] + 0.8 * X[:, 1] + 0.4 * X[:, 2] + 0.5 * t * X[:, 2]
    else:
        raise ValueError(f"{sid} is not an exchangeable-covariate scenario")
    xb = X @ beta
    return e, lambda X, t: t + xb


def _cluster_design(sid, n, p, rng):
    low, high = (0.1, 0.9) if sid == ScenarioId.S2 else (0.25, 0.75)
    j = np.arange(1, p + 1)
    beta = _normalized(1 / np.sqrt(j) if sid == ScenarioId.S2 else 1 / j)
    centers = rng.standard_normal((N_CLUSTERS, p))
    cluster = rng.integers(0, N_CLUSTERS, size=n)
    X = centers[cluster] + rng.standard_normal((n, p))
    e = np.where(cluster < N_CLUSTERS // 2, low, high)
    xb = X @ beta
    return X, e, (lambda X, t: 10 * t + xb), cluster


def scenario_beta(sid, p=P):
    """Linear outcome coefficients, where the scenario has them."""
    sid = ScenarioId(sid)
    j = np.arange(1, p + 1)
    table = {
        ScenarioId.S1: lambda: _sparse(p, _S1_BETA),
        ScenarioId.A4: lambda: _sparse(p, _S1_BETA),
        ScenarioId.S2: lambda: _normalized(1 / np.sqrt(j)),
        ScenarioId.A3: lambda: _normalized(1 / j),
        ScenarioId.S3: lambda: _s3_beta(p),
        ScenarioId.A1: lambda: np.zeros(p),
        ScenarioId.A2: lambda: _sparse(p, _A2_BETA),
    }
    if sid not in table:
        raise ValueError(f"{sid} has a nonlinear outcome model")
    return table[sid]()


def generate_scenario(sid, seed, replication=0, n=None, p=P, return_clusters=False):
    """Draw one dataset; deterministic in ``(sid, seed, replication)``.

    ``n`` overrides the scenario's sample size (used for large-sample checks).
    """
    sid = ScenarioId(sid)
    n = default_n(sid) if n is None else int(n)
    rng = make_rng("scenario", sid.value, seed, replication)
    clusters = None
    if sid in (ScenarioId.S2, ScenarioId.A3):
        X, e, mean, clusters = _cluster_design(sid, n, p, rng)
    else:
        X = sample_exchangeable_mvn(n, p, RHO, rng=rng)
        e, mean = _exchangeable_design(sid, X)
    T = (rng.random(n) < e).astype(float)
    eps = rng.standard_normal(n)
    mu0, mu1 = mean(X, 0.0), mean(X, 1.0)
    y0, y1 = mu0 + eps, mu1 + eps
    Y = np.where(T == 1, y1, y0)
    names = tuple(f"X{j}" for j in range(1, p + 1))
    draw = ScenarioDraw(
        dataset=Dataset(X, T, Y, names),
        true_ate=true_ate(sid),
        scenario=sid,
        seed=int(seed),
        replication=int(replication),
        oracle=Oracle(propensity=np.asarray(e, dtype=float), mu0=mu0, mu1=mu1, y0=y0, y1=y1),
    )
    return (draw, clusters) if return_clusters else draw
