"""Pure-numpy kernels for the Newton solvers.

These are the reference implementations; `_kernels_nb` carries @njit twins
with identical signatures. Linear predictors are clamped to |v| <= 30 before
the link is evaluated so exp never overflows; callers see the clamp count.
"""

import numpy as np

CLAMP = 30.0


def _clamped_xb(x, beta):
    v = x @ beta
    n_clamped = int(np.count_nonzero(np.abs(v) > CLAMP))
    max_abs = float(np.max(np.abs(v))) if v.size else 0.0
    return np.clip(v, -CLAMP, CLAMP), max_abs, n_clamped


def logistic_nll(x, d, beta):
    """Mean negative log-likelihood of the logistic model.

    Returns (nll, max_abs_xb).
    """
    v, max_abs, _ = _clamped_xb(x, beta)
    # log(1 + e^v) evaluated stably on both tails
    softplus = np.where(v > 0, v + np.log1p(np.exp(-v)), np.log1p(np.exp(v)))
    nll = float(np.mean(softplus - d * v))
    return nll, max_abs


def logistic_terms(x, d, beta):
    """Mean nll, mean score, mean Hessian of the logistic log-likelihood.

    Returns (nll, score, hessian, max_abs_xb, n_clamped) where
    score = X'(d - pi)/n and hessian = X' diag(pi(1-pi)) X / n.
    """
    n = x.shape[0]
    v, max_abs, n_clamped = _clamped_xb(x, beta)
    softplus = np.where(v > 0, v + np.log1p(np.exp(-v)), np.log1p(np.exp(v)))
    nll = float(np.mean(softplus - d * v))
    pi = 1.0 / (1.0 + np.exp(-v))
    score = x.T @ (d - pi) / n
    hess = (x * (pi * (1.0 - pi))[:, None]).T @ x / n
    return nll, score, hess, max_abs, n_clamped


def balance_residual(x, d, beta):
    """Mean covariate-balance residual g = mean[((d - pi)/(1 - pi)) x].

    Treated units contribute +x, controls contribute -odds * x.
    Returns (g, max_abs_xb).
    """
    n = x.shape[0]
    v, max_abs, _ = _clamped_xb(x, beta)
    odds = np.exp(v)
    w = np.where(d > 0.5, 1.0, -odds)
    g = x.T @ w / n
    return g, max_abs


def balance_terms(x, d, beta):
    """Balance residual and its Jacobian.

    J = -mean over controls of odds * x x'; for the logistic link the
    per-control weight pidot/(1-pi)^2 is exactly the odds.
    Returns (g, jac, max_abs_xb, n_clamped).
    """
    n = x.shape[0]
    v, max_abs, n_clamped = _clamped_xb(x, beta)
    odds = np.exp(v)
    w = np.where(d > 0.5, 1.0, -odds)
    g = x.T @ w / n
    ctrl_w = np.where(d > 0.5, 0.0, odds)
    jac = -(x * ctrl_w[:, None]).T @ x / n
    return g, jac, max_abs, n_clamped
