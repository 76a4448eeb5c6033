"""Approximate residual balancing weights on the probability simplex.

Weights minimize ``zeta * ||w||^2 + (1 - zeta) * ||target - X^T w||_inf^2`` over
``{w >= 0, sum(w) = 1}``. The objective is solved through its concave dual

    g(y) = (1 - zeta) * (2 y^T target - ||y||_1^2) + min_{w in simplex} [zeta ||w||^2 - 2 (1 - zeta) (X y)^T w]

whose inner minimizer is a simplex projection, so ``g`` is a smooth term plus
``-(1 - zeta) ||y||_1^2``. Accelerated proximal gradient ascent on ``y`` yields
primal iterates ``w(y)``; the primal/dual gap certifies convergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SolverError

DEFAULT_ZETA = 0.5
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 20_000


@dataclass(frozen=True)
class BalanceProblem:
    X_arm: np.ndarray
    target: np.ndarray
    zeta: float = DEFAULT_ZETA
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X_arm, dtype=float))
        target = np.atleast_1d(np.asarray(self.target, dtype=float))
        if X.shape[0] < 2:
            raise ValueError("need at least two units in the arm")
        if target.shape != (X.shape[1],) or not np.all(np.isfinite(target)):
            raise ValueError("target must be a finite vector with one entry per column")
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        object.__setattr__(self, "X_arm", X)
        object.__setattr__(self, "target", target)


def project_to_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def balance_objective(prob: BalanceProblem, w):
    imbalance = np.max(np.abs(prob.target - prob.X_arm.T @ w))
    return float(prob.zeta * (w @ w) + (1 - prob.zeta) * imbalance**2)


def _prox_l1_squared(v, kappa):
    """argmin_y kappa * ||y||_1^2 + 0.5 * ||y - v||^2."""
    a = np.sort(np.abs(v))[::-1]
    if a[0] == 0:
        return np.zeros_like(v)
    csum = np.cumsum(a)
    k = np.arange(1, len(a) + 1)
    tau = 2 * kappa * csum / (1 + 2 * kappa * k)
    # the largest k whose threshold keeps its own entry positive
    valid = a > tau
    kk = np.nonzero(valid)[0][-1]
    return np.sign(v) * np.maximum(np.abs(v) - tau[kk], 0.0)


def solve_balancing_weights(prob: BalanceProblem, return_info=False):
    """Balancing weights for one treatment arm.

    The returned weights are feasible and never worse than uniform weights.
    With ``return_info`` a dict with the objective, duality gap and iteration
    count is returned alongside.
    """
    X, b, zeta = prob.X_arm, prob.target, prob.zeta
    n_t = X.shape[0]
    c = (1 - zeta) / zeta
    lip = 2 * (1 - zeta) ** 2 / zeta * np.linalg.norm(X, 2) ** 2
    step = 1.0 / lip if lip > 0 else 1.0

    best_w = np.full(n_t, 1.0 / n_t)
    best_f = balance_objective(prob, best_w)
    history = [best_f]

    def dual_parts(y):
        a = c * (X @ y)
        w = project_to_simplex(a)
        smooth = 2 * (1 - zeta) * (y @ b) + zeta * ((w - a) @ (w - a) - a @ a)
        grad = 2 * (1 - zeta) * (b - X.T @ w)
        return smooth, grad, w

    y = np.zeros(X.shape[1])
    z = y.copy()
    t_acc = 1.0
    gap = np.inf
    g_best = -np.inf
    it = 0
    for it in range(1, prob.max_iter + 1):
        _, grad, w = dual_parts(z)
        y_new = _prox_l1_squared(z + step * grad, step * (1 - zeta))
        smooth, _, w_new = dual_parts(y_new)
        g_val = smooth - (1 - zeta) * np.sum(np.abs(y_new)) ** 2
        for cand in (w, w_new):
            f = balance_objective(prob, cand)
            if not np.isfinite(f):
                raise SolverError("balancing objective is not finite")
            if f < best_f:
                best_f, best_w = f, cand
        history.append(best_f)
        g_best = max(g_best, g_val)
        gap = best_f - g_best
        if gap <= prob.tol * max(1.0, best_f):
            break
        # restart momentum when the dual value stops increasing
        if g_val < g_best:
            t_acc = 1.0
            z = y_new
        else:
            t_next = (1 + np.sqrt(1 + 4 * t_acc**2)) / 2
            z = y_new + (t_acc - 1) / t_next * (y_new - y)
            t_acc = t_next
        y = y_new
    assert all(h1 <= h0 for h0, h1 in zip(history, history[1:]))
    if return_info:
        return best_w, {"objective": best_f, "gap": gap, "iterations": it}
    return best_w
