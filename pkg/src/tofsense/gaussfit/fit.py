"""Constrained maximum-likelihood fit of the Gaussian ansatz.

The feasible set A > sqrt(B_c^2 + B_s^2) is kept strictly interior by a log
barrier on A^2 - B_c^2 - B_s^2 (with A > 0 enforced in the line search). For
each barrier weight the penalised objective is maximised by damped Newton
steps using the analytic Hessian; the weight then shrinks by a fixed factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import FitError, ParameterError
from .model import PARAM_NAMES, GaussianModelParams, SampleStats, loglik_derivatives

__all__ = ["GaussianFit", "fit_gaussian", "fit_gaussian_detailed", "initial_guess"]


@dataclass
class GaussianFit:
    params: GaussianModelParams
    stderr: np.ndarray
    covariance: np.ndarray
    loglik: float
    n_samples: int
    iterations: int
    gradient_norm: float

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "stderr": dict(zip(PARAM_NAMES, self.stderr.tolist())),
            "loglik": self.loglik,
            "n_samples": self.n_samples,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
        }


def initial_guess(stats: SampleStats) -> np.ndarray:
    """Moment-based start: weighted least squares for the mean, then for the variance."""
    n = stats.count
    b = stats._basis
    w = np.sqrt(n)
    xm = (b[0:2] * w).T
    mu, *_ = np.linalg.lstsq(xm, stats.s1 / np.sqrt(n), rcond=None)
    m = mu @ b[0:2]
    var = (stats.s2 - 2.0 * m * stats.s1 + n * m * m) / n
    xv = (b[2:5] * w).T
    abc, *_ = np.linalg.lstsq(xv, var * w, rcond=None)
    a = max(abc[0], 1e-3 * max(float(np.mean(var)), 1e-12), 1e-300)
    bn = math.hypot(abc[1], abc[2])
    if bn >= 0.9 * a:
        abc[1:] *= 0.9 * a / bn
    return np.array([mu[0], mu[1], a, abc[1], abc[2]])


def _barrier(theta):
    a, bc, bs = theta[2], theta[3], theta[4]
    s = a * a - bc * bc - bs * bs
    ds = np.array([0.0, 0.0, 2 * a, -2 * bc, -2 * bs])
    d2s = np.diag([0.0, 0.0, 2.0, -2.0, -2.0])
    return math.log(s), ds / s, d2s / s - np.outer(ds, ds) / s**2


def _interior(theta) -> bool:
    return bool(theta[2] > 0 and theta[2] ** 2 - theta[3] ** 2 - theta[4] ** 2 > 0)


def _penalised(stats, theta, mu):
    val, g, h = loglik_derivatives(stats, theta)
    bv, bg, bh = _barrier(theta)
    n = stats.n
    return val / n + mu * bv, g / n + mu * bg, h / n + mu * bh


def _newton(stats, theta, mu, tol, max_steps):
    f, g, h = _penalised(stats, theta, mu)
    for step in range(max_steps):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            return theta, step, gnorm
        neg = -h
        shift = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(neg + shift * np.eye(5))
                break
            except np.linalg.LinAlgError:
                shift = max(2 * shift, 1e-10 * max(1.0, float(np.max(np.abs(neg)))))
        direction = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        t = 1.0
        slope = float(g @ direction)
        while t > 1e-12:
            cand = theta + t * direction
            if _interior(cand):
                fc, gc, hc = _penalised(stats, cand, mu)
                if np.isfinite(fc) and fc >= f + 1e-4 * t * slope:
                    break
            t *= 0.5
        else:
            return theta, step, gnorm
        theta, f, g, h = cand, fc, gc, hc
    return theta, max_steps, float(np.max(np.abs(g)))


def fit_gaussian_detailed(samples, *, mu0: float = 1e-2, shrink: float = 0.1,
                          mu_min: float = 1e-10, tol: float = 1e-9,
                          max_newton: int = 200) -> GaussianFit:
    """Maximise the Gaussian log-likelihood over the strictly feasible region.

    ``samples`` may be QuadratureSamples, SampleStats or a (p, phi) pair.
    Raises FitError carrying the last iterate and gradient norm on failure.
    The barrier grows like 2 mu ln(A) while the per-sample likelihood falls like
    ln(A)/2, so ``mu0`` must stay below 1/4 for the first subproblem to be bounded.
    """
    if not 0 < mu0 < 0.25:
        raise ParameterError("mu0 must lie in (0, 0.25)")
    stats = SampleStats.from_samples(samples)
    stats.require()
    theta = initial_guess(stats)
    mu = mu0
    total = 0
    gnorm = math.inf
    while True:
        theta, steps, gnorm = _newton(stats, theta, mu, tol, max_newton)
        total += steps
        if mu <= mu_min:
            break
        mu *= shrink
    val, g, h = loglik_derivatives(stats, theta)
    # Stationarity of the last barrier subproblem. At a boundary optimum the
    # bare likelihood gradient stays finite, so it is not the right test.
    if not np.all(np.isfinite(theta)) or not gnorm < 1e-6:
        raise FitError(f"barrier Newton did not converge (penalised gradient {gnorm:.3g})",
                       last_iterate=theta, gradient_norm=gnorm)
    info = -h
    try:
        cov = np.linalg.inv(info)
        stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        cov = np.full((5, 5), np.nan)
        stderr = np.full(5, np.nan)
    return GaussianFit(GaussianModelParams.from_array(theta), stderr, cov, float(val),
                       stats.n, total, gnorm)


def fit_gaussian(samples, **kw) -> GaussianModelParams:
    """Constrained MLE of (mu_z1, mu_p1, A, B_c, B_s)."""
    return fit_gaussian_detailed(samples, **kw).params
