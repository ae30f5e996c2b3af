"""ATT point estimators and influence-function-based inference.

Four estimators share one result type:

* ``att_or``    -- regression adjustment using controls only
* ``att_ipw``   -- odds reweighting with ML propensities
* ``att_aipw``  -- reweighting applied to regression residuals
* ``att_cbps``  -- reweighting with exact-balance propensities

Variances are estimates of Var(sqrt(n) * (tau_hat - tau)). OR and IPW use a
stacked estimating-equation sandwich that propagates first-step estimation;
AIPW and CBPS use the direct influence-function plug-in, which is valid for
CBPS even under single-model misspecification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CbpsDidError, ConstantTreatment, SingularJacobian
from .numopt import (
    CLAMP,
    LogisticLink,
    OutcomeFit,
    PropensityFit,
    cbps_solve,
    logistic_mle,
    ols_control,
    wls_cbps_gamma,
)
from .panel import DesignMatrix

Z_975 = 1.96

METHODS = ("ipw", "or", "aipw", "cbps")


@dataclass(frozen=True)
class AttResult:
    """Point estimate, asymptotic variance, CI, and per-unit influence."""

    tau: float
    asy_var: float  # Var of sqrt(n) (tau_hat - tau)
    se: float
    ci_low: float
    ci_high: float
    method: str
    influence: np.ndarray
    n: int
    propensity: PropensityFit | None = None
    outcome: OutcomeFit | None = None

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    @property
    def ci_length(self) -> float:
        return self.ci_high - self.ci_low


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, DesignMatrix):
        return x.x
    return np.asarray(x, dtype=np.float64)


def _result(tau, asy_var, method, influence, n, propensity=None, outcome=None):
    se = float(np.sqrt(asy_var / n))
    return AttResult(
        tau=float(tau),
        asy_var=float(asy_var),
        se=se,
        ci_low=float(tau - Z_975 * se),
        ci_high=float(tau + Z_975 * se),
        method=method,
        influence=influence,
        n=n,
        propensity=propensity,
        outcome=outcome,
    )


@dataclass(frozen=True)
class MomentStack:
    """Just-identified estimating equations with an analytic mean Jacobian.

    ``moments(theta)`` returns the n-by-m matrix of per-unit moment values;
    ``jacobian(theta)`` their mean derivative w.r.t. theta. ``tau_index``
    locates the target parameter within theta.
    """

    moments: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    tau_index: int


def _sandwich(stack: MomentStack, theta_hat: np.ndarray):
    m = stack.moments(theta_hat)
    g = stack.jacobian(theta_hat)
    if g.shape[0] != g.shape[1] or m.shape[1] != g.shape[0]:
        raise ValueError(
            f"stack must be just-identified: {m.shape[1]} moments, "
            f"{g.shape[1]} parameters"
        )
    e_tau = np.zeros(g.shape[0])
    e_tau[stack.tau_index] = 1.0
    try:
        row = np.linalg.solve(g.T, e_tau)  # tau row of G^{-1}
    except np.linalg.LinAlgError:
        raise SingularJacobian("stacked-moment Jacobian is singular") from None
    if not np.all(np.isfinite(row)):
        raise SingularJacobian("stacked-moment Jacobian solve produced non-finite values")
    influence = -(m @ row)
    return float(np.mean(influence**2)), influence


def sandwich_variance(stack: MomentStack, theta_hat: np.ndarray) -> float:
    """(tau, tau) entry of G^{-1} Omega G^{-T} at theta_hat.

    G is the sample-mean analytic Jacobian of the stacked moments and Omega
    the sample mean of their outer products.
    """
    var, _ = _sandwich(stack, theta_hat)
    return var


def _odds(x, beta):
    return np.exp(np.clip(x @ beta, -CLAMP, CLAMP))


def _or_stack(x: np.ndarray, dy: np.ndarray, d: np.ndarray) -> MomentStack:
    n, k = x.shape

    def moments(theta):
        gamma, p, tau = theta[:k], theta[k], theta[k + 1]
        resid = dy - x @ gamma
        m_gamma = ((1.0 - d) * resid)[:, None] * x
        m_p = d - p
        m_tau = (d / p) * (resid - tau)
        return np.column_stack([m_gamma, m_p, m_tau])

    def jacobian(theta):
        gamma, p, tau = theta[:k], theta[k], theta[k + 1]
        g = np.zeros((k + 2, k + 2))
        g[:k, :k] = -(x * (1.0 - d)[:, None]).T @ x / n
        g[k, k] = -1.0
        g[k + 1, :k] = -(d / p) @ x / n
        g[k + 1, k] = float(np.mean(-(d / p**2) * (dy - x @ gamma - tau)))
        g[k + 1, k + 1] = -float(np.mean(d)) / p
        return g

    return MomentStack(moments, jacobian, tau_index=k + 1)


def _ipw_stack(x: np.ndarray, dy: np.ndarray, d: np.ndarray) -> MomentStack:
    n, k = x.shape

    def moments(theta):
        beta, p, tau = theta[:k], theta[k], theta[k + 1]
        pi = LogisticLink.pi(x @ beta)
        m_beta = (d - pi)[:, None] * x
        m_p = d - p
        m_tau = (d - pi) / (p * (1.0 - pi)) * dy - (d / p) * tau
        return np.column_stack([m_beta, m_p, m_tau])

    def jacobian(theta):
        beta, p, tau = theta[:k], theta[k], theta[k + 1]
        pi = LogisticLink.pi(x @ beta)
        odds = _odds(x, beta)
        g = np.zeros((k + 2, k + 2))
        g[:k, :k] = -(x * (pi * (1.0 - pi))[:, None]).T @ x / n
        g[k, k] = -1.0
        # d/dbeta of (d - pi)/(1 - pi) is -(1 - d) * odds * x for the logistic link
        g[k + 1, :k] = (-(1.0 - d) * odds * dy / p) @ x / n
        g[k + 1, k] = float(np.mean(-(d - pi) * dy / (p**2 * (1.0 - pi)) + d * tau / p**2))
        g[k + 1, k + 1] = -float(np.mean(d)) / p
        return g

    return MomentStack(moments, jacobian, tau_index=k + 1)


def _aipw_stack(x: np.ndarray, dy: np.ndarray, d: np.ndarray) -> MomentStack:
    """Full first-step stack for AIPW; exposed as a variance diagnostic."""
    n, k = x.shape

    def moments(theta):
        beta, gamma, p, tau = theta[:k], theta[k : 2 * k], theta[2 * k], theta[2 * k + 1]
        pi = LogisticLink.pi(x @ beta)
        resid = dy - x @ gamma
        m_beta = (d - pi)[:, None] * x
        m_gamma = ((1.0 - d) * resid)[:, None] * x
        m_p = d - p
        m_tau = (d - pi) / (p * (1.0 - pi)) * resid - (d / p) * tau
        return np.column_stack([m_beta, m_gamma, m_p, m_tau])

    def jacobian(theta):
        beta, gamma, p, tau = theta[:k], theta[k : 2 * k], theta[2 * k], theta[2 * k + 1]
        pi = LogisticLink.pi(x @ beta)
        odds = _odds(x, beta)
        resid = dy - x @ gamma
        g = np.zeros((2 * k + 2, 2 * k + 2))
        g[:k, :k] = -(x * (pi * (1.0 - pi))[:, None]).T @ x / n
        g[k : 2 * k, k : 2 * k] = -(x * (1.0 - d)[:, None]).T @ x / n
        g[2 * k, 2 * k] = -1.0
        t = 2 * k + 1
        g[t, :k] = (-(1.0 - d) * odds * resid / p) @ x / n
        g[t, k : 2 * k] = (-(d - pi) / (p * (1.0 - pi))) @ x / n
        g[t, 2 * k] = float(np.mean(-(d - pi) * resid / (p**2 * (1.0 - pi)) + d * tau / p**2))
        g[t, t] = -float(np.mean(d)) / p
        return g

    return MomentStack(moments, jacobian, tau_index=2 * k + 1)


def _reweighting_tau(pi, dy, d, p) -> float:
    return float(np.mean((d - pi) / (p * (1.0 - pi)) * dy))


def _plugin_influence(pi, dy, d, p, gamma_fitted, tau) -> np.ndarray:
    return (d - pi) / (p * (1.0 - pi)) * (dy - gamma_fitted) - (d / p) * tau


def att_or(x, dy, d) -> AttResult:
    """Regression-adjustment ATT: treated mean of dy minus fitted trend."""
    x = _as_matrix(x)
    dy = np.asarray(dy, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if d.max() == 0.0:
        raise ConstantTreatment("no treated units")
    fit = ols_control(x, dy, d)
    treat = d == 1.0
    tau = float(np.mean(dy[treat]) - np.mean(x[treat] @ fit.gamma))
    p = float(np.mean(d))
    theta = np.concatenate([fit.gamma, [p, tau]])
    var, influence = _sandwich(_or_stack(x, dy, d), theta)
    return _result(tau, var, "OR", influence, x.shape[0], outcome=fit)


def att_ipw(x, dy, d) -> AttResult:
    """Odds-reweighting ATT with maximum-likelihood propensities."""
    x = _as_matrix(x)
    dy = np.asarray(dy, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    fit = logistic_mle(x, d)
    pi = fit.propensities(x)
    p = float(np.mean(d))
    tau = _reweighting_tau(pi, dy, d, p)
    theta = np.concatenate([fit.beta, [p, tau]])
    var, influence = _sandwich(_ipw_stack(x, dy, d), theta)
    return _result(tau, var, "IPW", influence, x.shape[0], propensity=fit)


def att_aipw(x, dy, d) -> AttResult:
    """Doubly robust ATT: reweighting applied to regression residuals."""
    x = _as_matrix(x)
    dy = np.asarray(dy, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    ps = logistic_mle(x, d)
    out = ols_control(x, dy, d)
    pi = ps.propensities(x)
    p = float(np.mean(d))
    fitted = x @ out.gamma
    tau = float(np.mean((d - pi) / (p * (1.0 - pi)) * (dy - fitted)))
    influence = _plugin_influence(pi, dy, d, p, fitted, tau)
    var = float(np.mean(influence**2))
    return _result(tau, var, "AIPW", influence, x.shape[0], propensity=ps, outcome=out)


def att_cbps(x, dy, d, start: np.ndarray | None = None) -> AttResult:
    """Balance-reweighting ATT with influence-function variance.

    The point estimate ignores the outcome regression entirely; the variance
    plug-in uses the odds-weighted least-squares coefficients, which keep the
    influence representation valid under single-model misspecification.
    """
    x = _as_matrix(x)
    dy = np.asarray(dy, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    fit = cbps_solve(x, d, start=start)
    pi = fit.propensities(x)
    p = float(np.mean(d))
    tau = _reweighting_tau(pi, dy, d, p)
    out = wls_cbps_gamma(x, dy, d, fit.beta)
    influence = _plugin_influence(pi, dy, d, p, x @ out.gamma, tau)
    var = float(np.mean(influence**2))
    return _result(tau, var, "CBPS", influence, x.shape[0], propensity=fit, outcome=out)


def aipw_sandwich_variance(x, dy, d) -> float:
    """Optional diagnostic: full stacked-moment sandwich for the AIPW tau."""
    x = _as_matrix(x)
    dy = np.asarray(dy, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    ps = logistic_mle(x, d)
    out = ols_control(x, dy, d)
    pi = ps.propensities(x)
    p = float(np.mean(d))
    tau = float(np.mean((d - pi) / (p * (1.0 - pi)) * (dy - x @ out.gamma)))
    theta = np.concatenate([ps.beta, out.gamma, [p, tau]])
    return sandwich_variance(_aipw_stack(x, dy, d), theta)


def efficient_influence(oracle_pi, oracle_m, dy, d, tau: float, p: float) -> np.ndarray:
    """Per-unit efficient influence values from oracle nuisances.

    eta_i = (d - pi)/(p (1 - pi)) * (dy - m) - (d / p) * tau, with pi the true
    propensity and m the true conditional outcome evolution of controls.
    """
    oracle_pi = np.asarray(oracle_pi, dtype=np.float64)
    oracle_m = np.asarray(oracle_m, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(oracle_pi <= 0.0) or np.any(oracle_pi >= 1.0):
        raise ValueError("oracle propensities must lie strictly inside (0, 1)")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    return (d - oracle_pi) / (p * (1.0 - oracle_pi)) * (dy - oracle_m) - (d / p) * tau


def estimate_all(x, dy, d, methods=METHODS):
    """Run several estimators, sharing first-step fits.

    Returns (results, failures): method -> AttResult for successes and
    method -> exception for estimators that could not be computed.
    """
    x = _as_matrix(x)
    dy = np.asarray(dy, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    results: dict[str, AttResult] = {}
    failures: dict[str, Exception] = {}

    ml_fit = None
    ml_err: Exception | None = None
    if "ipw" in methods or "aipw" in methods or "cbps" in methods:
        try:
            ml_fit = logistic_mle(x, d)
        except CbpsDidError as exc:
            ml_err = exc

    for method in methods:
        try:
            if method == "or":
                results[method] = att_or(x, dy, d)
            elif method == "ipw":
                if ml_err is not None:
                    raise ml_err
                pi = ml_fit.propensities(x)
                p = float(np.mean(d))
                tau = _reweighting_tau(pi, dy, d, p)
                theta = np.concatenate([ml_fit.beta, [p, tau]])
                var, infl = _sandwich(_ipw_stack(x, dy, d), theta)
                results[method] = _result(tau, var, "IPW", infl, x.shape[0], propensity=ml_fit)
            elif method == "aipw":
                if ml_err is not None:
                    raise ml_err
                out = ols_control(x, dy, d)
                pi = ml_fit.propensities(x)
                p = float(np.mean(d))
                fitted = x @ out.gamma
                tau = float(np.mean((d - pi) / (p * (1.0 - pi)) * (dy - fitted)))
                infl = _plugin_influence(pi, dy, d, p, fitted, tau)
                results[method] = _result(
                    tau, float(np.mean(infl**2)), "AIPW", infl, x.shape[0],
                    propensity=ml_fit, outcome=out,
                )
            elif method == "cbps":
                start = ml_fit.beta if ml_fit is not None else None
                results[method] = att_cbps(x, dy, d, start=start)
            else:
                raise ValueError(f"unknown method {method!r}")
        except CbpsDidError as exc:
            failures[method] = exc
    return results, failures
