"""Compiled coordinate-descent kernels for l1-penalized least squares and logistic regression.

Both kernels work on a column-centered design and update arrays in place.
Status codes: 0 converged, 1 hit an iteration cap, 2 objective increased.
"""

import numpy as np
from numba import njit

OK = 0
MAX_ITER = 1
OBJ_INCREASE = 2

_OBJ_SLACK = 1e-12


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _penalty(beta, pf, lam):
    s = 0.0
    for j in range(beta.shape[0]):
        if pf[j] > 0.0:
            s += pf[j] * abs(beta[j])
    return lam * s


@njit(cache=True)
def _wls_objective(r, w, beta, pf, lam):
    n = r.shape[0]
    s = 0.0
    for i in range(n):
        s += w[i] * r[i] * r[i]
    return s / (2.0 * n) + _penalty(beta, pf, lam)


NEWTON_AFTER = 2


@njit(cache=True)
def _active_newton(X, w, pf, lam, beta, b0, r):
    """Newton step on the active set with signs held fixed.

    Solves the restricted quadratic for (intercept, active coefficients) and moves
    toward its minimizer, stopping at the first coordinate that would change sign
    (that coordinate is set to zero). Returns the new intercept and a flag telling
    whether the step was taken.
    """
    n, p = X.shape
    m = 0
    for j in range(p):
        if beta[j] != 0.0:
            m += 1
    idx = np.empty(m, dtype=np.int64)
    k = 0
    for j in range(p):
        if beta[j] != 0.0:
            idx[k] = j
            k += 1
    # weighted design [1, X_A] scaled by sqrt(w); Gram and gradient via BLAS
    A = np.empty((n, m + 1))
    wr = np.empty(n)
    for i in range(n):
        sq = np.sqrt(w[i])
        A[i, 0] = sq
        wr[i] = sq * r[i]
    for a in range(m):
        ja = idx[a]
        for i in range(n):
            A[i, a + 1] = np.sqrt(w[i]) * X[i, ja]
    M = np.dot(A.T, A) / n
    g = -np.dot(A.T, wr) / n
    for a in range(m):
        ja = idx[a]
        sgn = 1.0 if beta[ja] > 0 else -1.0
        g[a + 1] += lam * pf[ja] * sgn
    try:
        delta = np.linalg.solve(M, -g)
    except Exception:
        return b0, False
    for a in range(m + 1):
        if not np.isfinite(delta[a]):
            return b0, False
    t = 1.0
    hit = -1
    for a in range(m):
        ja = idx[a]
        nb = beta[ja] + delta[a + 1]
        if nb * beta[ja] <= 0.0:
            ta = -beta[ja] / delta[a + 1]
            if ta < t:
                t = ta
                hit = a
    if t <= 0.0:
        return b0, False
    b0 += t * delta[0]
    for i in range(n):
        r[i] -= t * delta[0]
    for a in range(m):
        ja = idx[a]
        d = t * delta[a + 1]
        if a == hit:
            d = -beta[ja]
        if d != 0.0:
            beta[ja] += d
            for i in range(n):
                r[i] -= d * X[i, ja]
    return b0, True


@njit(cache=True)
def weighted_lasso_cd(X, w, pf, lam, beta, b0, r, tol, max_full, max_passes):
    """Minimize (1/2n) sum w_i r_i^2 + lam * sum pf_j |beta_j| by cyclic coordinate descent.

    ``r`` must hold ``z - b0 - X @ beta`` on entry and is kept in sync.
    Returns (b0, full_cycles, passes, status).
    """
    n, p = X.shape
    cj = np.zeros(p)
    sw = 0.0
    for i in range(n):
        sw += w[i]
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j] * X[i, j]
        cj[j] = s / n

    obj_prev = _wls_objective(r, w, beta, pf, lam)
    full = True
    full_cycles = 0
    passes = 0
    active_run = 0
    status = OK
    beta_save = np.empty(p)
    r_save = np.empty(n)
    while True:
        maxd = 0.0
        for j in range(p):
            if cj[j] == 0.0:
                continue
            old = beta[j]
            if not full and old == 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += w[i] * X[i, j] * r[i]
            g /= n
            t = lam * pf[j] if pf[j] > 0.0 else 0.0
            new = _soft(g + cj[j] * old, t) / cj[j]
            if new != old:
                d = new - old
                for i in range(n):
                    r[i] -= d * X[i, j]
                beta[j] = new
                if abs(d) > maxd:
                    maxd = abs(d)
        if sw > 0.0:
            s = 0.0
            for i in range(n):
                s += w[i] * r[i]
            d0 = s / sw
            if d0 != 0.0:
                for i in range(n):
                    r[i] -= d0
                b0 += d0
                if abs(d0) > maxd:
                    maxd = abs(d0)
        passes += 1
        if full:
            full_cycles += 1
        obj = _wls_objective(r, w, beta, pf, lam)
        if obj > obj_prev + _OBJ_SLACK * (1.0 + abs(obj_prev)):
            status = OBJ_INCREASE
            break
        obj_prev = obj
        if full:
            if maxd < tol:
                break
            full = False
            active_run = 0
        elif maxd < tol:
            full = True
        else:
            active_run += 1
            if active_run >= NEWTON_AFTER:
                active_run = 0
                beta_save[:] = beta
                r_save[:] = r
                b0_save = b0
                b0, took = _active_newton(X, w, pf, lam, beta, b0, r)
                if took:
                    obj = _wls_objective(r, w, beta, pf, lam)
                    if obj > obj_prev:
                        beta[:] = beta_save
                        r[:] = r_save
                        b0 = b0_save
                    else:
                        obj_prev = obj
        if full_cycles >= max_full or passes >= max_passes:
            status = MAX_ITER
            break
    return b0, full_cycles, passes, status


@njit(cache=True)
def _logistic_objective(eta, y, beta, pf, lam):
    n = eta.shape[0]
    s = 0.0
    for i in range(n):
        e = eta[i]
        # log(1 + exp(e)) - y * e, computed stably
        if e > 0:
            s += e + np.log1p(np.exp(-e)) - y[i] * e
        else:
            s += np.log1p(np.exp(e)) - y[i] * e
    return s / n + _penalty(beta, pf, lam)


@njit(cache=True)
def _linear_predictor(X, beta, b0, out):
    n, p = X.shape
    for i in range(n):
        out[i] = b0
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for i in range(n):
                out[i] += X[i, j] * bj


@njit(cache=True)
def logistic_lasso_irls(X, y, pf, lam, beta, b0, tol, max_outer, max_full, max_passes, min_weight):
    """Minimize mean Bernoulli NLL + lam * sum pf_j |beta_j| by IRLS with inner coordinate descent.

    Returns (b0, outer_iterations, total_passes, status).
    """
    n, p = X.shape
    eta = np.empty(n)
    w = np.empty(n)
    r = np.empty(n)
    beta_old = np.empty(p)
    _linear_predictor(X, beta, b0, eta)
    obj_old = _logistic_objective(eta, y, beta, pf, lam)
    total = 0
    status = OK
    converged = False
    obj = obj_old
    it = 0
    while it < max_outer:
        it += 1
        for i in range(n):
            pr = 1.0 / (1.0 + np.exp(-eta[i]))
            wi = pr * (1.0 - pr)
            if wi < min_weight:
                wi = min_weight
            w[i] = wi
            r[i] = (y[i] - pr) / wi
        for j in range(p):
            beta_old[j] = beta[j]
        b0_old = b0
        b0, _, passes, st = weighted_lasso_cd(X, w, pf, lam, beta, b0, r, tol, max_full, max_passes)
        total += passes
        if st != OK:
            status = st
            break
        # step halving guards against IRLS overshoot
        for _half in range(30):
            _linear_predictor(X, beta, b0, eta)
            obj = _logistic_objective(eta, y, beta, pf, lam)
            if obj <= obj_old + _OBJ_SLACK * (1.0 + abs(obj_old)):
                break
            for j in range(p):
                beta[j] = 0.5 * (beta[j] + beta_old[j])
            b0 = 0.5 * (b0 + b0_old)
        maxd = abs(b0 - b0_old)
        for j in range(p):
            d = abs(beta[j] - beta_old[j])
            if d > maxd:
                maxd = d
        obj_old = obj
        if maxd < tol:
            converged = True
            break
    if not converged and status == OK:
        status = MAX_ITER
    return b0, it, total, status
