"""Independent reference implementations used to freeze expected values.

Nothing here imports the package's numerical kernels: each oracle is a
textbook formula, an arbitrary-precision evaluation or a brute-force
simulation of the same physics.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np

HBAR = 1.054571817e-34
K_B = 1.380649e-23


# --------------------------------------------------------------------------
# special functions in arbitrary precision


def hermite_function(m: int, x: float, dps: int = 50) -> float:
    """psi_m(x) = (2 pi)^-1/4 (2^m m!)^-1/2 H_m(x / sqrt 2) exp(-x^2 / 4)."""
    with mp.workdps(dps):
        x = mp.mpf(x)
        val = (2 * mp.pi) ** mp.mpf(-0.25) / mp.sqrt(2**m * mp.factorial(m)) \
            * mp.hermite(m, x / mp.sqrt(2)) * mp.exp(-x * x / 4)
        return float(val)


def fock_wigner(n: int, z: float, p: float, dps: int = 40) -> float:
    """Wigner function of |n><n| with unit vacuum quadrature variance."""
    with mp.workdps(dps):
        r2 = mp.mpf(z) ** 2 + mp.mpf(p) ** 2
        return float((-1) ** n / (2 * mp.pi) * mp.laguerre(n, 0, r2) * mp.exp(-r2 / 2))


def thermal_populations(n: float, n_max: int) -> np.ndarray:
    k = np.arange(n_max + 1)
    return n**k / (n + 1.0) ** (k + 1)


# --------------------------------------------------------------------------
# Gaussian states


def gaussian_fidelity(mean1, cov1, mean2, cov2) -> float:
    """Squared Uhlmann fidelity of two single-mode Gaussian states.

    Moments are in units where the vacuum covariance is the identity; the
    closed form below is written for vacuum covariance I/2, hence the halving.
    """
    v1 = np.asarray(cov1, float) / 2.0
    v2 = np.asarray(cov2, float) / 2.0
    d = (np.asarray(mean1, float) - np.asarray(mean2, float)) / math.sqrt(2.0)
    delta = np.linalg.det(v1 + v2)
    small = 4.0 * (np.linalg.det(v1) - 0.25) * (np.linalg.det(v2) - 0.25)
    pre = 1.0 / (math.sqrt(delta + small) - math.sqrt(small))
    return float(pre * math.exp(-0.5 * d @ np.linalg.solve(v1 + v2, d)))


def free_flight_variance(var_z, cov_zp, var_p, mass, t):
    """Position variance after ballistic flight of duration t."""
    return var_z + 2.0 * cov_zp * t / mass + var_p * (t / mass) ** 2


# --------------------------------------------------------------------------
# Langevin trajectories


def langevin_covariance(mass, omega0, omega_sp, t_sp, t_tof, accel, n, gamma_bg,
                        n_traj=100_000, steps_per_period=2000, seed=12345):
    """Euler-Maruyama ensemble of the trapped-then-free particle.

    Starts from the thermal state of the omega0 trap, evolves for t_sp in a
    trap of frequency omega_sp and then flies freely for t_tof, all under the
    constant acceleration ``accel`` and momentum diffusion 2 m k_B gamma_bg.
    Returns (final z, final p) arrays.
    """
    gen = np.random.default_rng(seed)
    kappa = 2.0 * n + 1.0
    z = accel / omega0**2 + math.sqrt(kappa * HBAR / (2 * mass * omega0)) * gen.standard_normal(n_traj)
    p = math.sqrt(kappa * HBAR * mass * omega0 / 2) * gen.standard_normal(n_traj)
    diff = math.sqrt(2.0 * mass * K_B * gamma_bg)

    def run(z, p, omega, duration, dt_target):
        steps = max(1, int(math.ceil(duration / dt_target)))
        dt = duration / steps
        kick = diff * math.sqrt(dt)
        for _ in range(steps):
            force = mass * accel - mass * omega**2 * (z - 0.0)
            z, p = z + p / mass * dt, p + force * dt + kick * gen.standard_normal(n_traj)
        return z, p

    period = 2.0 * math.pi / omega_sp
    if t_sp > 0:
        z, p = run(z, p, omega_sp, t_sp, period / steps_per_period)
    z, p = run(z, p, 0.0, t_tof, t_tof / steps_per_period)
    return z, p


def covariance_with_errors(z, p):
    """Sample covariance entries (zz, zp, pp) and their Monte-Carlo standard errors."""
    dz, dp = z - z.mean(), p - p.mean()
    out = []
    for prod in (dz * dz, dz * dp, dp * dp):
        out.append((float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(len(prod)))))
    return out


# --------------------------------------------------------------------------
# estimators written out longhand


def allan_naive(y, m: int) -> float:
    """Non-overlapping Allan deviation by explicit loops over windows."""
    k = len(y) // m
    means = [sum(y[i * m:(i + 1) * m]) / m for i in range(k)]
    acc = sum((means[i + 1] - means[i]) ** 2 for i in range(k - 1))
    return math.sqrt(acc / (2 * (k - 1)))


def split_rhat_textbook(chains) -> float:
    """Gelman-Rubin on half-chains, classic (non-rank) form."""
    chains = np.asarray(chains, float)
    n = chains.shape[1] // 2
    halves = np.concatenate([chains[:, :n], chains[:, n:2 * n]])
    m = halves.shape[0]
    means = halves.mean(axis=1)
    b = n * sum((mu - means.mean()) ** 2 for mu in means) / (m - 1)
    w = sum(np.var(h, ddof=1) for h in halves) / m
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def ar1_iact(a: float) -> float:
    """Integrated autocorrelation time of an AR(1) process with coefficient a."""
    return (1.0 + a) / (1.0 - a)


def g_statistic(observed, expected) -> float:
    obs = np.asarray(observed, float)
    exp = np.asarray(expected, float)
    pos = obs > 0
    return float(2.0 * np.sum(obs[pos] * np.log(obs[pos] / exp[pos])))


def gaussian_fisher_numeric(sigma: float, mixture=None) -> float:
    """I[P] by adaptive quadrature for a normal or a two-component mixture."""
    if mixture is None:
        mixture = [(1.0, 0.0, sigma)]

    def pdf(q):
        return sum(w * mp.npdf(q, mu, s) for w, mu, s in mixture)

    def dpdf(q):
        return sum(-w * (q - mu) / s**2 * mp.npdf(q, mu, s) for w, mu, s in mixture)

    with mp.workdps(30):
        return float(mp.quad(lambda q: dpdf(q) ** 2 / pdf(q), [-mp.inf, -5, 0, 5, mp.inf]))
