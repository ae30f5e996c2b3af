"""Numba twins of the kernels in `_kernels_np`.

Same signatures and return layouts; loops are fused so each Newton iteration
makes a single pass over the data. Importing this module triggers no
compilation (lazy on first call, cached on disk).
"""

import numpy as np
from numba import njit

CLAMP = 30.0


@njit(cache=True)
def logistic_nll(x, d, beta):
    n, k = x.shape
    nll = 0.0
    max_abs = 0.0
    for i in range(n):
        v = 0.0
        for j in range(k):
            v += x[i, j] * beta[j]
        a = abs(v)
        if a > max_abs:
            max_abs = a
        if v > CLAMP:
            v = CLAMP
        elif v < -CLAMP:
            v = -CLAMP
        if v > 0.0:
            sp = v + np.log1p(np.exp(-v))
        else:
            sp = np.log1p(np.exp(v))
        nll += sp - d[i] * v
    return nll / n, max_abs


@njit(cache=True)
def logistic_terms(x, d, beta):
    n, k = x.shape
    nll = 0.0
    max_abs = 0.0
    n_clamped = 0
    score = np.zeros(k)
    hess = np.zeros((k, k))
    for i in range(n):
        v = 0.0
        for j in range(k):
            v += x[i, j] * beta[j]
        a = abs(v)
        if a > max_abs:
            max_abs = a
        if a > CLAMP:
            n_clamped += 1
            v = CLAMP if v > 0.0 else -CLAMP
        if v > 0.0:
            sp = v + np.log1p(np.exp(-v))
        else:
            sp = np.log1p(np.exp(v))
        nll += sp - d[i] * v
        pi = 1.0 / (1.0 + np.exp(-v))
        r = d[i] - pi
        w = pi * (1.0 - pi)
        for j in range(k):
            score[j] += r * x[i, j]
            for l in range(j, k):
                hess[j, l] += w * x[i, j] * x[i, l]
    for j in range(k):
        for l in range(j):
            hess[j, l] = hess[l, j]
    return nll / n, score / n, hess / n, max_abs, n_clamped


@njit(cache=True)
def balance_residual(x, d, beta):
    n, k = x.shape
    g = np.zeros(k)
    max_abs = 0.0
    for i in range(n):
        v = 0.0
        for j in range(k):
            v += x[i, j] * beta[j]
        a = abs(v)
        if a > max_abs:
            max_abs = a
        if v > CLAMP:
            v = CLAMP
        elif v < -CLAMP:
            v = -CLAMP
        w = 1.0 if d[i] > 0.5 else -np.exp(v)
        for j in range(k):
            g[j] += w * x[i, j]
    return g / n, max_abs


@njit(cache=True)
def balance_terms(x, d, beta):
    n, k = x.shape
    g = np.zeros(k)
    jac = np.zeros((k, k))
    max_abs = 0.0
    n_clamped = 0
    for i in range(n):
        v = 0.0
        for j in range(k):
            v += x[i, j] * beta[j]
        a = abs(v)
        if a > max_abs:
            max_abs = a
        if a > CLAMP:
            n_clamped += 1
            v = CLAMP if v > 0.0 else -CLAMP
        if d[i] > 0.5:
            for j in range(k):
                g[j] += x[i, j]
        else:
            odds = np.exp(v)
            for j in range(k):
                g[j] -= odds * x[i, j]
                for l in range(j, k):
                    jac[j, l] -= odds * x[i, j] * x[i, l]
    for j in range(k):
        for l in range(j):
            jac[j, l] = jac[l, j]
    return g / n, jac / n, max_abs, n_clamped
