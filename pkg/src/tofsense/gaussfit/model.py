"""Phase-space Gaussian ansatz for homodyne quadrature samples.

A Gaussian with mean (mu_z1, mu_p1) and covariance Sigma projects onto the
rotated quadrature p~(phi) = -z1 sin(phi) + p1 cos(phi) as a normal law with

    M(phi) = -mu_z1 sin(phi) + mu_p1 cos(phi)
    V(phi) = A + B_c cos(2 phi) + B_s sin(2 phi)

where A = (S_zz + S_pp)/2, B_c = (S_pp - S_zz)/2 and B_s = -S_zp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientDataError, ParameterError

__all__ = ["GaussianModelParams", "SampleStats", "gaussian_loglik", "loglik_derivatives",
           "PARAM_NAMES"]

PARAM_NAMES = ("mu_z1", "mu_p1", "A", "B_c", "B_s")


@dataclass(frozen=True)
class GaussianModelParams:
    mu_z1: float
    mu_p1: float
    A: float
    B_c: float
    B_s: float

    def __post_init__(self):
        if not self.feasible(self.as_array()):
            raise ParameterError(
                f"need A > sqrt(B_c^2 + B_s^2); got A={self.A}, |B|={math.hypot(self.B_c, self.B_s)}")

    @staticmethod
    def feasible(theta) -> bool:
        return bool(np.all(np.isfinite(theta)) and theta[2] > math.hypot(theta[3], theta[4]))

    @property
    def b_norm(self) -> float:
        return math.hypot(self.B_c, self.B_s)

    @property
    def sigma_plus(self) -> float:
        return math.sqrt(self.A + self.b_norm)

    @property
    def sigma_minus(self) -> float:
        return math.sqrt(self.A - self.b_norm)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mu_z1, self.mu_p1])

    @property
    def covariance(self) -> np.ndarray:
        """Sigma in the (z1, p1) basis."""
        szz = self.A - self.B_c
        spp = self.A + self.B_c
        return np.array([[szz, -self.B_s], [-self.B_s, spp]])

    def as_array(self) -> np.ndarray:
        return np.array([self.mu_z1, self.mu_p1, self.A, self.B_c, self.B_s], dtype=float)

    @classmethod
    def from_array(cls, theta) -> "GaussianModelParams":
        return cls(*(float(x) for x in theta))

    @classmethod
    def from_moments(cls, mean, cov) -> "GaussianModelParams":
        cov = np.asarray(cov, dtype=float)
        return cls(float(mean[0]), float(mean[1]), 0.5 * (cov[0, 0] + cov[1, 1]),
                   0.5 * (cov[1, 1] - cov[0, 0]), -float(cov[0, 1]))

    def rotated(self, delta: float) -> "GaussianModelParams":
        """Parameters describing the same data after every phase is shifted by ``delta``."""
        c, s = math.cos(delta), math.sin(delta)
        c2, s2 = math.cos(2 * delta), math.sin(2 * delta)
        # M(phi - delta) and V(phi - delta) rewritten as functions of phi
        mz = c * self.mu_z1 - s * self.mu_p1
        mp = s * self.mu_z1 + c * self.mu_p1
        bc = c2 * self.B_c - s2 * self.B_s
        bs = s2 * self.B_c + c2 * self.B_s
        return GaussianModelParams(mz, mp, self.A, bc, bs)

    def mean_at(self, phi):
        return -self.mu_z1 * np.sin(phi) + self.mu_p1 * np.cos(phi)

    def variance_at(self, phi):
        return self.A + self.B_c * np.cos(2 * phi) + self.B_s * np.sin(2 * phi)

    def to_dict(self) -> dict:
        d = dict(zip(PARAM_NAMES, self.as_array().tolist()))
        d.update(sigma_plus=self.sigma_plus, sigma_minus=self.sigma_minus)
        return d


class SampleStats:
    """Per-phase sufficient statistics (count, sum p, sum p^2) of quadrature samples.

    The Gaussian log-likelihood depends on the data only through these, so
    repeated evaluations (optimisation, MCMC) cost O(phases), not O(samples).
    """

    def __init__(self, p, phi):
        p = np.asarray(p, dtype=float).ravel()
        phi = np.asarray(phi, dtype=float).ravel()
        if p.shape != phi.shape:
            raise ParameterError("p and phi must have equal length")
        self.phases, inv = np.unique(phi, return_inverse=True)
        self.count = np.bincount(inv, minlength=len(self.phases)).astype(float)
        self.s1 = np.bincount(inv, weights=p, minlength=len(self.phases))
        self.s2 = np.bincount(inv, weights=p * p, minlength=len(self.phases))
        self.n = int(p.size)
        self._basis = np.stack([-np.sin(self.phases), np.cos(self.phases),
                                np.ones_like(self.phases), np.cos(2 * self.phases),
                                np.sin(2 * self.phases)])

    @classmethod
    def from_samples(cls, samples) -> "SampleStats":
        """Accept a SampleStats, a QuadratureSamples, or a (p, phi) pair."""
        if isinstance(samples, cls):
            return samples
        if hasattr(samples, "flat"):
            return cls(*samples.flat())
        p, phi = samples
        return cls(p, phi)

    def require(self, min_samples: int = 5, min_phases: int = 2) -> None:
        if self.n < min_samples or len(self.phases) < min_phases:
            raise InsufficientDataError(
                f"need >= {min_samples} samples over >= {min_phases} phases; "
                f"got {self.n} samples over {len(self.phases)} phases")

    def mean_var(self, theta):
        """M and V at every phase, for a single parameter vector or a stack (k, 5)."""
        theta = np.asarray(theta, dtype=float)
        b = self._basis
        m = theta[..., 0:1] * b[0] + theta[..., 1:2] * b[1]
        v = theta[..., 2:3] + theta[..., 3:4] * b[3] + theta[..., 4:5] * b[4]
        return m, v


def _loglik_stats(stats: SampleStats, theta) -> np.ndarray:
    m, v = stats.mean_var(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = stats.s2 - 2.0 * m * stats.s1 + stats.count * m * m
        terms = -0.5 * stats.count * np.log(2.0 * math.pi * v) - 0.5 * sq / v
    out = terms.sum(axis=-1)
    return np.where(np.all(v > 0, axis=-1), out, -np.inf)


def gaussian_loglik(params, samples) -> float:
    """Sum over samples of ln N(p_i; M(phi_i), V(phi_i))."""
    theta = params.as_array() if isinstance(params, GaussianModelParams) else np.asarray(params, float)
    stats = SampleStats.from_samples(samples)
    _, v = stats.mean_var(theta)
    if np.any(v <= 0):
        bad = stats.phases[np.argmin(v)]
        raise ParameterError(f"model variance is not positive at phase {bad:.6g}")
    return float(_loglik_stats(stats, theta))


def loglik_derivatives(stats: SampleStats, theta):
    """Value, gradient and Hessian of the log-likelihood at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    m, v = stats.mean_var(theta)
    n, s1, s2 = stats.count, stats.s1, stats.s2
    sq = s2 - 2.0 * m * s1 + n * m * m           # sum of (p - M)^2 per phase
    r1 = s1 - n * m                              # sum of (p - M)
    value = float(np.sum(-0.5 * n * np.log(2.0 * math.pi * v) - 0.5 * sq / v))
    dm = r1 / v
    dv = -0.5 * n / v + 0.5 * sq / v**2
    dmm = -n / v
    dmv = -r1 / v**2
    dvv = 0.5 * n / v**2 - sq / v**3
    b = stats._basis
    gm = b[0:2]                                  # dM/d(mu_z1, mu_p1)
    gv = b[2:5]                                  # dV/d(A, B_c, B_s)
    grad = np.concatenate([gm @ dm, gv @ dv])
    hess = np.zeros((5, 5))
    hess[:2, :2] = (gm * dmm) @ gm.T
    hess[:2, 2:] = (gm * dmv) @ gv.T
    hess[2:, :2] = hess[:2, 2:].T
    hess[2:, 2:] = (gv * dvv) @ gv.T
    return value, grad, hess
