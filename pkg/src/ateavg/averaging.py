"""Equal-weight and trimmed averages of candidate ATE estimates.

The averaged estimator is ``theta_A = sum_m w_m theta_m`` with weights fixed
before seeing the data. Its variance is bounded by assuming every pair of
candidates is perfectly correlated, which gives ``(sum_m w_m sigma_m)^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

WEIGHT_TOL = 1e-10


@dataclass(frozen=True)
class AveragedEstimate:
    theta_A: float
    sigma_A: float
    weights: np.ndarray
    included: tuple
    level: float
    interval: tuple
    reject_null: bool
    excluded: tuple = field(default=())

    def covers(self, truth):
        return self.interval[0] <= truth <= self.interval[1]


def wald_interval(theta, sigma, level=0.95):
    """Normal interval ``theta +/- z_{(1+level)/2} * sigma``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    half = norm.ppf((1 + level) / 2) * sigma
    return theta - half, theta + half


def conservative_variance(sigmas, weights=None):
    """``sum_i sum_j w_i w_j sigma_i sigma_j``, computed as ``(w @ sigma)^2``."""
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.ndim != 1 or len(sigmas) == 0:
        raise ValueError("sigmas must be a non-empty vector")
    if np.any(~np.isfinite(sigmas)) or np.any(sigmas <= 0):
        raise ValueError("standard errors must be positive and finite")
    w = _check_weights(weights, len(sigmas))
    return float(w @ sigmas) ** 2


def _check_weights(weights, M):
    if weights is None:
        return np.full(M, 1.0 / M)
    w = np.asarray(weights, dtype=float)
    if w.shape != (M,):
        raise ValueError(f"expected {M} weights, got shape {w.shape}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be nonnegative and finite")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def _unpack(outputs):
    theta = np.array([o.theta_hat for o in outputs], dtype=float)
    sigma = np.array([o.sigma_hat for o in outputs], dtype=float)
    return theta, sigma


def average_estimates(outputs, weights=None, level=0.95, excluded=()):
    """Weighted average of at least two candidate estimates.

    ``excluded`` only records methods that were dropped upstream (for example
    because they failed); see :func:`average_available` for renormalization.
    """
    outputs = list(outputs)
    if len(outputs) < 2:
        raise ValueError("need at least two estimates to average")
    theta, sigma = _unpack(outputs)
    if np.any(~np.isfinite(theta)):
        raise ValueError("estimates must be finite")
    w = _check_weights(weights, len(outputs))
    theta_A = float(w @ theta)
    # guard against rounding pushing the average outside the inputs' range
    theta_A = min(max(theta_A, theta[w > 0].min()), theta[w > 0].max())
    sigma_A = np.sqrt(conservative_variance(sigma, w))
    lo, hi = wald_interval(theta_A, sigma_A, level)
    return AveragedEstimate(
        theta_A=theta_A,
        sigma_A=float(sigma_A),
        weights=w,
        included=tuple(o.method for o in outputs),
        level=level,
        interval=(lo, hi),
        reject_null=not (lo <= 0.0 <= hi),
        excluded=tuple(excluded),
    )


def average_available(outputs, failed=(), weights=None, level=0.95):
    """Average the successful outputs, renormalizing a priori weights over them.

    ``weights`` maps method to weight over the full candidate set (successful
    and failed); defaults to equal weights.
    """
    outputs = list(outputs)
    if weights is not None:
        w = np.array([weights[o.method] for o in outputs], dtype=float)
        if w.sum() <= 0:
            raise ValueError("all surviving methods have zero weight")
        w = w / w.sum()
    else:
        w = None
    return average_estimates(outputs, w, level, excluded=tuple(failed))


def _ordinal(method):
    return getattr(method, "ordinal", 0)


def trimmed_average(outputs, level=0.95, excluded=()):
    """Equal-weight average after dropping one highest and one lowest estimate.

    Among tied extremes the one with the larger standard error is dropped,
    then the one with the lowest method ordinal.
    """
    outputs = list(outputs)
    if len(outputs) < 4:
        raise ValueError("trimming needs at least four estimates")
    theta, sigma = _unpack(outputs)
    idx = range(len(outputs))

    def pick(extreme):
        cands = [i for i in idx if theta[i] == extreme]
        return min(cands, key=lambda i: (-sigma[i], _ordinal(outputs[i].method), i))

    hi = pick(theta.max())
    lo_cands = [i for i in idx if i != hi]
    lo_val = min(theta[i] for i in lo_cands)
    lo = min((i for i in lo_cands if theta[i] == lo_val), key=lambda i: (-sigma[i], _ordinal(outputs[i].method), i))
    kept = [outputs[i] for i in idx if i not in (hi, lo)]
    return average_estimates(kept, level=level, excluded=tuple(excluded))
