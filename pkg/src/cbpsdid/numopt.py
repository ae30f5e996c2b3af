"""Numerical kernels: least squares, logistic ML, and the balance solver.

Both propensity solvers are damped Newton iterations over kernel-evaluated
score/Jacobian terms (see `backend`). Tolerances are scaled by
1 + max-abs column mean of the design so they track the data's magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import (
    ConstantTreatment,
    NoConvergence,
    RankDeficient,
    Separation,
    TooFewControls,
)

CLAMP = 30.0
ML_TOL = 1e-8
CBPS_TOL = 1e-9
STEP_RTOL = 1e-12
ML_MAX_ITER = 100
CBPS_MAX_ITER = 200
MAX_HALVINGS = 30


class LogisticLink:
    """The logistic response pi(v) = e^v / (1 + e^v) and its derivative.

    Arguments are clamped to |v| <= 30 before exponentiation, so outputs are
    always strictly inside (0, 1) and the odds stay below e^30.
    """

    @staticmethod
    def pi(v):
        v = np.clip(v, -CLAMP, CLAMP)
        return 1.0 / (1.0 + np.exp(-v))

    @staticmethod
    def dpi(v):
        p = LogisticLink.pi(v)
        return p * (1.0 - p)


@dataclass(frozen=True)
class PropensityFit:
    """First-step propensity estimate with convergence diagnostics."""

    beta: np.ndarray
    method: str  # "ML" or "CBPS"
    converged: bool
    iterations: int
    residual_norm: float  # max-abs of the estimating equation at beta
    n_clamped: int = 0  # units whose linear predictor hit the clamp
    merit_path: tuple[float, ...] = field(default=(), repr=False)

    def propensities(self, x: np.ndarray) -> np.ndarray:
        return LogisticLink.pi(x @ self.beta)


@dataclass(frozen=True)
class OutcomeFit:
    """Outcome-evolution regression coefficients."""

    gamma: np.ndarray
    kind: str  # "OLS_control" or "WLS_cbps"

    def predict(self, x: np.ndarray) -> np.ndarray:
        return x @ self.gamma


def _tolerance_scale(x: np.ndarray) -> float:
    return 1.0 + float(np.abs(x.mean(axis=0)).max())


def _require_both_groups(d: np.ndarray) -> None:
    if d.min() == d.max():
        raise ConstantTreatment(
            "all units share one treatment status; need both treated and controls"
        )


def _solve_spd(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    """Solve a x = b for symmetric positive-definite a via Cholesky."""
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise RankDeficient(f"{what} is singular; design is rank deficient") from None
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def ols_control(x: np.ndarray, dy: np.ndarray, d: np.ndarray) -> OutcomeFit:
    """Least squares of the outcome evolution on X over control units only."""
    k = x.shape[1]
    ctrl = d == 0.0
    n_ctrl = int(np.count_nonzero(ctrl))
    if n_ctrl < k:
        raise TooFewControls(f"{n_ctrl} control units but {k} coefficients")
    gamma, _, rank, _ = np.linalg.lstsq(x[ctrl], dy[ctrl], rcond=None)
    if rank < k:
        raise RankDeficient("control design matrix is rank deficient")
    return OutcomeFit(gamma, "OLS_control")


def wls_cbps_gamma(
    x: np.ndarray, dy: np.ndarray, d: np.ndarray, beta: np.ndarray
) -> OutcomeFit:
    """Weighted least squares with per-control weight pidot/(1-pi)^2.

    Under the logistic link that weight is the odds pi/(1-pi); treated units
    get weight zero. When beta = 0 all control weights are equal and the fit
    coincides with `ols_control`.
    """
    k = x.shape[1]
    ctrl = d == 0.0
    odds = np.exp(np.clip(x[ctrl] @ beta, -CLAMP, CLAMP))
    sw = np.sqrt(odds)
    gamma, _, rank, _ = np.linalg.lstsq(x[ctrl] * sw[:, None], dy[ctrl] * sw, rcond=None)
    if rank < k:
        raise RankDeficient("weighted control cross-moment matrix is rank deficient")
    return OutcomeFit(gamma, "WLS_cbps")


def logistic_mle(x: np.ndarray, d: np.ndarray) -> PropensityFit:
    """Logistic maximum likelihood via Newton-Raphson with step halving.

    Starts at beta = 0; accepts only steps that strictly decrease the mean
    negative log-likelihood. Converges when the max-abs mean score falls
    below 1e-8 * scale (a tiny relative step with the score already at that
    level also counts). Saturated linear predictors that stall the score are
    reported as separation.
    """
    _require_both_groups(d)
    kern = kernels()
    n, k = x.shape
    tol = ML_TOL * _tolerance_scale(x)
    beta = np.zeros(k)
    nll, score, hess, max_abs, n_clamped = kern.logistic_terms(x, d, beta)
    snorm = float(np.abs(score).max())
    merit = [nll]
    for it in range(1, ML_MAX_ITER + 1):
        if snorm <= tol:
            if max_abs > CLAMP:
                raise Separation(
                    "score vanished only because linear predictors saturated "
                    f"(max |x'beta| = {max_abs:.1f})"
                )
            return PropensityFit(beta, "ML", True, it - 1, snorm, n_clamped, tuple(merit))
        direction = _solve_spd(hess, score, "logistic Hessian")
        step = direction
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step
            cand_nll, _ = kern.logistic_nll(x, d, cand)
            if cand_nll < nll:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            raise NoConvergence(
                f"logistic likelihood stalled at iteration {it} "
                f"(max-abs score {snorm:.3e})",
                residual=snorm,
            )
        small_step = np.abs(step).max() <= STEP_RTOL * (1.0 + np.abs(cand).max())
        beta = cand
        prev_snorm = snorm
        nll, score, hess, max_abs, n_clamped = kern.logistic_terms(x, d, beta)
        snorm = float(np.abs(score).max())
        merit.append(nll)
        if max_abs > CLAMP and snorm >= prev_snorm * (1.0 - 1e-12):
            raise Separation(
                "treatment is (near-)perfectly predicted: linear predictor "
                f"saturated at |x'beta| = {max_abs:.1f} with a non-decreasing score"
            )
        if small_step:
            if snorm <= tol:
                if max_abs > CLAMP:
                    raise Separation(
                        "score vanished only because linear predictors saturated "
                        f"(max |x'beta| = {max_abs:.1f})"
                    )
                return PropensityFit(beta, "ML", True, it, snorm, n_clamped, tuple(merit))
            raise NoConvergence(
                f"step size collapsed with max-abs score {snorm:.3e} above "
                f"tolerance {tol:.3e}",
                residual=snorm,
            )
    if snorm <= tol and max_abs <= CLAMP:
        return PropensityFit(beta, "ML", True, ML_MAX_ITER, snorm, n_clamped, tuple(merit))
    raise NoConvergence(
        f"logistic ML did not converge in {ML_MAX_ITER} iterations "
        f"(max-abs score {snorm:.3e})",
        residual=snorm,
    )


def balance_residual(x: np.ndarray, d: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Mean balance residual: mean[((d - pi)/(1 - pi)) x] at beta."""
    g, _ = kernels().balance_residual(x, d, beta)
    return g


def cbps_solve(x: np.ndarray, d: np.ndarray, start: np.ndarray | None = None) -> PropensityFit:
    """Solve the exact-balance equations mean[((d - pi)/(1 - pi)) x] = 0.

    Just-identified Newton with the analytic Jacobian
    -mean[(1-d) * odds * x x']; steps are halved until the Euclidean norm of
    the residual decreases. Starts from the logistic ML solution when none is
    supplied, falling back to beta = 0 if that fit fails.
    """
    _require_both_groups(d)
    kern = kernels()
    n, k = x.shape
    tol = CBPS_TOL * _tolerance_scale(x)
    if start is None:
        try:
            start = logistic_mle(x, d).beta
        except (Separation, NoConvergence):
            start = np.zeros(k)
    beta = np.asarray(start, dtype=np.float64).copy()
    g, jac, max_abs, n_clamped = kern.balance_terms(x, d, beta)
    gnorm = float(np.linalg.norm(g))
    merit = [gnorm]
    for it in range(1, CBPS_MAX_ITER + 1):
        resid = float(np.abs(g).max())
        if resid <= tol:
            return PropensityFit(beta, "CBPS", True, it - 1, resid, n_clamped, tuple(merit))
        direction = _solve_spd(-jac, g, "balance Jacobian")
        step = direction
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step
            cand_g, _ = kern.balance_residual(x, d, cand)
            cand_norm = float(np.linalg.norm(cand_g))
            if cand_norm < gnorm:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            raise NoConvergence(
                "balance equations stalled: treated covariate means may not be "
                f"reachable by odds-weighted controls (max-abs residual {resid:.3e})",
                residual=resid,
            )
        beta = cand
        g, jac, max_abs, n_clamped = kern.balance_terms(x, d, beta)
        gnorm = float(np.linalg.norm(g))
        merit.append(gnorm)
    resid = float(np.abs(g).max())
    if resid <= tol:
        return PropensityFit(beta, "CBPS", True, CBPS_MAX_ITER, resid, n_clamped, tuple(merit))
    raise NoConvergence(
        f"balance solver did not converge in {CBPS_MAX_ITER} iterations "
        f"(max-abs residual {resid:.3e})",
        residual=resid,
    )
