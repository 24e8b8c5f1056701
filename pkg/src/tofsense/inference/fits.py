"""Classical fits: oscillation offset, susceptibility, squeezing floor, heating rate,
and the position distribution of the folded readout."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal, stats as sps

from ..constants import HBAR, K_B
from ..errors import FitError, InsufficientDataError, ParameterError
from ..phasespace import ProtocolConfig, sigma_z_heating_model

__all__ = [
    "FitReport", "fit_oscillation_offset", "oscillation_offset_theory", "tilt_from_offset",
    "fit_susceptibility", "fit_squeezing_floor", "squeezing_floor_model", "normalized_sigma_z",
    "estimate_heating_rate", "fit_heating_rate", "fit_position_distribution",
]


@dataclass
class FitReport:
    model: str
    params: dict
    stderr: dict
    residual: dict
    n_points: int
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not (v >= 0) for v in self.stderr.values()):
            raise ParameterError("standard errors must be >= 0")

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        return {"model": self.model, "params": dict(self.params), "stderr": dict(self.stderr),
                "residual": dict(self.residual), "n_points": self.n_points,
                "notes": list(self.notes), "extra": dict(self.extra)}


def _least_squares(fun, x0, names, n, bounds=(-np.inf, np.inf), absolute_sigma=False, **kw):
    """Wrap scipy's least_squares and return (x, stderr, residual summary, result)."""
    opts = dict(xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000, x_scale="jac")
    opts.update(kw)
    res = optimize.least_squares(fun, x0, bounds=bounds, **opts)
    if not res.success:
        raise FitError(f"least squares did not converge: {res.message}", last_iterate=res.x,
                       gradient_norm=float(np.max(np.abs(res.grad))) if res.grad is not None else None)
    dof = n - len(x0)
    rss = float(res.fun @ res.fun)
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac)
    except np.linalg.LinAlgError:
        cov = np.full((len(x0), len(x0)), np.inf)
    if not absolute_sigma:
        cov = cov * (rss / dof if dof > 0 else np.inf)
    diag = np.diag(cov)
    se = np.where(np.isfinite(diag), np.sqrt(np.abs(diag)), np.inf)
    resid = {"rss": rss, "dof": dof, "rms": math.sqrt(rss / n) if n else math.nan}
    if absolute_sigma and dof > 0:
        resid["reduced_chi2"] = rss / dof
    return res.x, dict(zip(names, se.tolist())), resid, res


# --------------------------------------------------------------------------
# oscillation of the mean position versus hold time


def oscillation_offset_theory(cfg: ProtocolConfig) -> float:
    """b1 = (g sin(theta) / 2) (t_tof^2 - 1/omega0^2 + 1/omega1^2)."""
    return 0.5 * cfg.g * math.sin(cfg.theta) * (cfg.t_tof**2 - 1.0 / cfg.omega0**2 + 1.0 / cfg.omega1**2)


def tilt_from_offset(b1: float, cfg: ProtocolConfig) -> float:
    """Invert the offset formula for theta [rad]; ``b1`` must carry its physical sign."""
    lever = 0.5 * cfg.g * (cfg.t_tof**2 - 1.0 / cfg.omega0**2 + 1.0 / cfg.omega1**2)
    ratio = b1 / lever
    if abs(ratio) > 1:
        raise ParameterError("offset too large for the given flight time")
    return math.asin(ratio)


def _osc(p, t, b5):
    b1, b2, b3, b4 = p[:4]
    return np.abs(b1 + b2 * np.cos(b3 * t + b4)) + (p[4] if b5 is None else b5)


def _frequency_guess(t, y):
    t = np.asarray(t)
    span = t.max() - t.min()
    dt = np.median(np.diff(np.sort(t)))
    freqs = np.linspace(2 * math.pi / span, math.pi / dt, 4000)
    power = signal.lombscargle(t, y - y.mean(), freqs)
    return float(freqs[np.argmax(power)])


def fit_oscillation_offset(t_sp, mu_z, b5: float | None = None, sigma=None,
                           omega_guess: float | None = None) -> FitReport:
    """Fit mu_z(t_sp) = |b1 + b2 cos(b3 t_sp + b4)| + b5.

    Multi-start over b4 in {0, pi/2, pi, 3pi/2}; ``b5`` is held fixed when
    given. The absolute value makes the overall sign of (b1, b2) unobservable,
    so the result is reported with b1 >= 0 and b2 >= 0 (b4 adjusted).
    """
    t = np.asarray(t_sp, dtype=float)
    y = np.asarray(mu_z, dtype=float)
    if t.shape != y.shape or len(t) < 8:
        raise InsufficientDataError("need >= 8 (t_sp, mu_z) points")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    omega = omega_guess if omega_guess is not None else _frequency_guess(t, y)
    if np.ptp(t) < 2 * math.pi / omega:
        raise InsufficientDataError("data must span at least one oscillation period")
    b5_0 = 0.0 if b5 is None else b5
    names = ["b1", "b2", "b3", "b4"] + ([] if b5 is not None else ["b5"])
    amp = 0.5 * np.ptp(y)
    best = None
    for b4 in (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi):
        x0 = [max(y.mean() - b5_0, 1e-30), amp, omega, b4] + ([] if b5 is not None else [0.0])
        try:
            x, se, resid, res = _least_squares(lambda p: (_osc(p, t, b5) - y) * w, x0, names, len(t),
                                               absolute_sigma=sigma is not None)
        except FitError:
            continue
        if best is None or res.cost < best[3].cost:
            best = (x, se, resid, res)
    if best is None:
        raise FitError("oscillation fit failed from every starting phase")
    x, se, resid, _ = best
    b1, b2, b3, b4 = x[:4]
    if b3 < 0:
        b3, b4 = -b3, -b4
    if b2 < 0:
        b2, b4 = -b2, b4 + math.pi
    if b1 < 0:
        b1, b4 = -b1, b4 + math.pi
    params = {"b1": b1, "b2": b2, "b3": b3, "b4": math.fmod(b4, 2 * math.pi) % (2 * math.pi),
              "b5": x[4] if b5 is None else b5}
    stderr = {k: se.get(k, 0.0) for k in params}
    notes = [] if b5 is None else ["b5 held fixed"]
    if b5 is None and b1 > b2:
        notes.append("curve never reaches zero: b1 and b5 are not separately identifiable")
    if b2 <= 1e-12 * max(b1, 1e-300):
        notes.append("no oscillation detected: b3 and b4 are undetermined")
    return FitReport("abs_sinusoid_offset", params, stderr, resid, len(t), notes)


# --------------------------------------------------------------------------
# susceptibility


def fit_susceptibility(theta, mu_z, cfg: ProtocolConfig, sigma=None) -> FitReport:
    """Weighted straight line mu_z = a + chi F with F = m g sin(theta).

    The slope chi is the susceptibility dmu_z/dF [m/N]. Standard errors use
    the given ``sigma`` as absolute, otherwise the residual scatter; with only
    two tilts and no ``sigma`` the scatter is unknown and the errors are inf.
    """
    th = np.asarray(theta, dtype=float)
    y = np.asarray(mu_z, dtype=float)
    force = cfg.mass * cfg.g * np.sin(th)
    if len(np.unique(force)) < 2:
        raise FitError("design matrix is rank deficient: need >= 2 distinct tilts")
    notes = [] if len(th) >= 3 else ["fewer than 3 tilt angles"]
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    scale = np.max(np.abs(force))
    x = np.column_stack([np.ones_like(force), force / scale]) * w[:, None]
    coef, *_ = np.linalg.lstsq(x, y * w, rcond=None)
    resid = y * w - x @ coef
    dof = len(y) - 2
    rss = float(resid @ resid)
    cov = np.linalg.inv(x.T @ x)
    if sigma is None:
        cov = cov * (rss / dof if dof > 0 else np.inf)
    se = np.sqrt(np.diag(cov))
    params = {"intercept": float(coef[0]), "chi": float(coef[1] / scale)}
    stderr = {"intercept": float(se[0]), "chi": float(se[1] / scale)}
    return FitReport("linear_mu_vs_force", params, stderr,
                     {"rss": rss, "dof": dof, "rms": math.sqrt(rss / len(y))}, len(y), notes,
                     {"chi_nm_per_N": params["chi"] * 1e9})


# --------------------------------------------------------------------------
# squeezing floor


def normalized_sigma_z(sigma_z, cfg: ProtocolConfig):
    """m sigma_z / (t_tof sqrt(hbar m omega0 / 2)), the momentum-normalised spread."""
    return cfg.mass * np.asarray(sigma_z, float) / (cfg.t_tof * math.sqrt(HBAR * cfg.mass * cfg.omega0 / 2.0))


def squeezing_floor_model(r, v_ini: float, v_n: float):
    return np.sqrt(v_n + v_ini * np.exp(-4.0 * np.asarray(r, float)))


def fit_squeezing_floor(r, y, sigma=None) -> FitReport:
    """Fit the normalised minimum spread y(r) = sqrt(V_n + V_ini exp(-4 r)), V >= 0."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(r)) < 4:
        raise InsufficientDataError("need >= 4 distinct squeezing parameters")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    # linear start from y^2 = V_n + V_ini e^{-4r}
    a = np.column_stack([np.exp(-4 * r), np.ones_like(r)])
    x0 = np.clip(np.linalg.lstsq(a, y * y, rcond=None)[0], 1e-6, None)
    x, se, resid, _ = _least_squares(lambda p: (squeezing_floor_model(r, *p) - y) * w, x0,
                                     ["V_ini", "V_n"], len(r), bounds=([0, 0], [np.inf, np.inf]),
                                     absolute_sigma=sigma is not None)
    return FitReport("squeezing_floor", {"V_ini": float(x[0]), "V_n": float(x[1])}, se, resid, len(r),
                     extra={"plateau": math.sqrt(x[1])})


# --------------------------------------------------------------------------
# background-gas heating


def _heating_fit(t, s, err, cfg, with_prep, n=None, gamma=None, noise_floor=0.0):
    """One-parameter fit of n (gamma fixed) or gamma (n fixed) to sigma_z(t_tof)."""
    free = "n" if n is None else "gamma_bg"

    def model(p):
        nn = p[0] if free == "n" else n
        gg = p[0] if free == "gamma_bg" else gamma
        var = sigma_z_heating_model(t, nn, 0.0, cfg, with_prep) ** 2
        var = var + 2.0 * K_B * gg * t**3 / (3.0 * cfg.mass) + noise_floor**2
        return np.sqrt(np.clip(var, 0.0, None))

    x0 = [max(cfg.n, 0.1)] if free == "n" else [max(cfg.gamma_bg, 1e-3)]
    x, se, resid, _ = _least_squares(lambda p: (model(p) - s) / err, x0, [free], len(t),
                                     absolute_sigma=True)
    return float(x[0]), se[free], resid


def fit_heating_rate(t_tof, sigma_z, sigma_err, n: float, cfg: ProtocolConfig,
                     noise_floor: float = 0.0) -> FitReport:
    """Gamma_BG from with-preparation spreads at fixed occupation ``n``."""
    t, s, e = (np.asarray(a, float) for a in (t_tof, sigma_z, sigma_err))
    g, se, resid = _heating_fit(t, s, e, cfg, True, n=n, noise_floor=noise_floor)
    return FitReport("heating_with_prep", {"gamma_bg": g}, {"gamma_bg": se}, resid, len(t),
                     extra={"n": n})


def estimate_heating_rate(no_prep, with_prep, cfg: ProtocolConfig, tol: float = 0.01,
                          max_rounds: int = 100, noise_floor: float = 0.0) -> FitReport:
    """Alternate between n (from no-preparation data) and Gamma_BG (from with-preparation data).

    ``no_prep`` and ``with_prep`` are (t_tof, sigma_z, sigma_err) triples taken
    at the same pressure. Starts from Gamma_BG = 0 and stops when Gamma_BG
    changes by less than ``tol`` (relative) between rounds.
    """
    t0, s0, e0 = (np.asarray(a, float) for a in no_prep)
    t1, s1, e1 = (np.asarray(a, float) for a in with_prep)
    if len(t0) < 2 or len(t1) < 2:
        raise InsufficientDataError("each dataset needs >= 2 flight times")
    gamma = 0.0
    trace = []
    for k in range(1, max_rounds + 1):
        n, se_n, _ = _heating_fit(t0, s0, e0, cfg, False, gamma=gamma, noise_floor=noise_floor)
        new, se_g, resid = _heating_fit(t1, s1, e1, cfg, True, n=n, noise_floor=noise_floor)
        trace.append((n, new))
        change = abs(new - gamma)
        gamma = new
        if k > 1 and change <= tol * max(abs(gamma), se_g):
            return FitReport("heating_alternating", {"n": n, "gamma_bg": gamma},
                             {"n": se_n, "gamma_bg": se_g}, resid, len(t0) + len(t1),
                             extra={"rounds": k, "trace": trace})
    raise FitError(f"alternating heating fit did not settle in {max_rounds} rounds; trace {trace[-5:]}",
                   last_iterate=trace[-1])


# --------------------------------------------------------------------------
# folded readout


def fit_position_distribution(abs_z, threshold: float = 3.0) -> FitReport:
    """Mean and spread of the signed position from the folded readout |z|.

    When the plain estimate gives mu >= ``threshold`` sigma the fold is
    irrelevant and sample moments are used; otherwise a folded-normal
    likelihood is maximised and the report is flagged.
    """
    a = np.abs(np.asarray(abs_z, dtype=float))
    if len(a) < 3:
        raise InsufficientDataError("need >= 3 shots")
    n = len(a)
    mu, sd = float(a.mean()), float(a.std(ddof=1))
    if sd == 0 or mu >= threshold * sd:
        return FitReport("gaussian", {"mu_z": mu, "sigma_z": sd},
                         {"mu_z": sd / math.sqrt(n), "sigma_z": sd / math.sqrt(2 * (n - 1))},
                         {}, n)
    c, _, scale = sps.foldnorm.fit(a, floc=0.0)
    mu_f, sd_f = c * scale, scale
    # observed information by finite differences of the folded log-likelihood
    def nll(p):
        return -np.sum(sps.foldnorm.logpdf(a, p[0] / p[1], scale=p[1]))
    h = np.zeros((2, 2))
    x = np.array([mu_f, sd_f])
    eps = 1e-4 * np.maximum(np.abs(x), sd_f)
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * eps[i], np.eye(2)[j] * eps[j]
            h[i, j] = (nll(x + ei + ej) - nll(x + ei - ej) - nll(x - ei + ej) + nll(x - ei - ej)) / (4 * eps[i] * eps[j])
    try:
        se = np.sqrt(np.abs(np.diag(np.linalg.inv(h))))
    except np.linalg.LinAlgError:
        se = np.array([np.inf, np.inf])
    return FitReport("folded_normal", {"mu_z": float(mu_f), "sigma_z": float(sd_f)},
                     {"mu_z": float(se[0]), "sigma_z": float(se[1])}, {}, n,
                     ["mean below threshold x sigma: folded-normal likelihood used"])
