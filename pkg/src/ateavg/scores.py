"""Influence-function building blocks shared by the candidate estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_propensity(e):
    e = np.asarray(e, dtype=float)
    if np.any(e <= 0) or np.any(e >= 1):
        raise ValueError("propensity scores must lie strictly inside (0, 1); clip them first")
    return e


def clip_propensity(e, clip):
    """Clip into ``[clip, 1 - clip]``; returns the clipped scores and how many moved."""
    e = np.asarray(e, dtype=float)
    out = np.clip(e, clip, 1 - clip)
    return out, int(np.sum(out != e))


def aipw_scores(Y, T, mu1, mu0, e):
    e = _check_propensity(e)
    Y, T, mu1, mu0 = (np.asarray(a, dtype=float) for a in (Y, T, mu1, mu0))
    return mu1 - mu0 + T * (Y - mu1) / e - (1 - T) * (Y - mu0) / (1 - e)


def aipw_point_and_var(Y, T, mu1, mu0, e):
    """Doubly robust (AIPW) point estimate and its influence-function standard error."""
    psi = aipw_scores(Y, T, mu1, mu0, e)
    theta = float(psi.mean())
    sigma = float(psi.std() / np.sqrt(len(psi)))
    return theta, sigma


def tmle_target(Y, T, mu1, mu0, e):
    """One linear fluctuation step along the clever covariate.

    Returns ``(theta, sigma, epsilon)``. After the update the efficient score
    ``sum(H * (Y - mu_star))`` is zero up to rounding.
    """
    e = _check_propensity(e)
    Y, T, mu1, mu0 = (np.asarray(a, dtype=float) for a in (Y, T, mu1, mu0))
    H = T / e - (1 - T) / (1 - e)
    hh = H @ H
    if hh == 0:
        raise ValueError("clever covariate is identically zero")
    mu_obs = np.where(T == 1, mu1, mu0)
    eps = float(H @ (Y - mu_obs) / hh)
    mu1_star = mu1 + eps / e
    mu0_star = mu0 - eps / (1 - e)
    theta = float(np.mean(mu1_star - mu0_star))
    mu_star = np.where(T == 1, mu1_star, mu0_star)
    D = H * (Y - mu_star) + (mu1_star - mu0_star) - theta
    sigma = float(D.std() / np.sqrt(len(D)))
    return theta, sigma, eps


def tmle_score_mean(Y, T, mu1, mu0, e, eps):
    """|mean(H * (Y - mu_star))| after fluctuating by ``eps``."""
    e = np.asarray(e, dtype=float)
    H = T / e - (1 - T) / (1 - e)
    mu_star = np.where(T == 1, mu1 + eps / e, mu0 - eps / (1 - e))
    return float(abs(np.mean(H * (Y - mu_star))))


@dataclass(frozen=True)
class MatchTable:
    matches: np.ndarray  # (n, k) indices of opposite-arm matches
    counts: np.ndarray  # times each unit is used as a match


def nearest_neighbor_match(scores, T, k=1):
    """k nearest opposite-arm neighbours of every unit, with replacement.

    Distances are Euclidean on the score columns rescaled to unit variance.
    Ties go to the lower index.
    """
    S = np.asarray(scores, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    T = np.asarray(T)
    sd = S.std(axis=0, ddof=1)
    S = S / np.where(sd > 0, sd, 1.0)
    n = len(T)
    treated = np.flatnonzero(T == 1)
    control = np.flatnonzero(T == 0)
    if len(treated) == 0 or len(control) == 0:
        raise ValueError("both arms must be non-empty")
    if k > min(len(treated), len(control)):
        raise ValueError("k exceeds the size of an arm")
    matches = np.empty((n, k), dtype=np.int64)
    for units, pool in ((treated, control), (control, treated)):
        d2 = ((S[units, None, :] - S[None, pool, :]) ** 2).sum(axis=2)
        # stable sort keeps ascending pool index among equal distances
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        matches[units] = pool[order]
    counts = np.bincount(matches.ravel(), minlength=n)
    return MatchTable(matches=matches, counts=counts)
