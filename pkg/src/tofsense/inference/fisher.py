"""Fisher information of the post-flight position readout for a static tilt.

For a readout z = s * p~(phi) + D * theta with s the quadrature-to-position
scale, the tilt information is F_theta = (D / s)^2 I[P_phi], where I[P] is the
translation Fisher information of the quadrature density. The force
information follows from F = m g theta as F_force = F_theta / (m g)^2.

Two variants are provided. ``homodyne`` uses the exact homodyne scale
sqrt(hbar/2 m w) sqrt(1 + (w t)^2), the arctan-corrected phase and
D = m g chi (chi from susceptibility_theory), so a Gaussian state reproduces
sensitivity_theory. ``long_tof`` keeps only the flight-mapped momentum term:
s = (t/m) sqrt(hbar m w / 2), phi = w t_sp and D = g t sin(w t_sp)/w + g t^2/2.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from .. import rng
from ..constants import HBAR
from ..errors import FrameMismatchError, InsufficientDataError, ParameterError
from ..fockstate import DensityMatrix, moments, quadrature_pdf
from ..phasespace import ProtocolConfig, quarter_period, susceptibility_theory
from ..synthlab import QuadratureSamples, _quadrature_scale, bin_quadratures, phase_of
from ..tomomle import MleSettings, cache_for, reconstruct

log = logging.getLogger(__name__)

__all__ = ["FisherResult", "BootstrapSettings", "translation_fisher", "fisher_sensitivity",
           "bootstrap_fisher", "gaussian_translation_fisher"]

BOUNDARY_LIMIT = 1e-8
EXCLUDE_BELOW = 1e-12


@dataclass
class FisherResult:
    f_theta: float
    f_force: float
    sensitivity: float
    translation_info: float
    phase: float
    variant: str
    with_prep: bool
    boot_mean: float | None = None
    boot_interval: tuple | None = None
    boot_values: list = field(default_factory=list, repr=False)
    n_boot: int = 0
    n_failed: int = 0
    degenerate_interval: bool = False
    audit: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.f_theta > 0 and self.f_force > 0 and math.isfinite(self.sensitivity)):
            raise ParameterError("Fisher information must be positive and the sensitivity finite")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "boot_values"}
        if self.boot_interval is not None:
            d["boot_interval"] = list(self.boot_interval)
        return d


def translation_fisher(pdf, grid) -> float:
    """I[P] = integral (dP/dq)^2 / P dq on a uniform grid.

    Central differences, trapezoid rule; points below 1e-12 of the peak are
    dropped. Raises ParameterError if the density at either end exceeds
    1e-8 of the peak, since the integral would then be truncated.
    """
    p = np.asarray(pdf, dtype=float)
    q = np.asarray(grid, dtype=float)
    if p.shape != q.shape or p.ndim != 1 or len(p) < 5:
        raise ParameterError("pdf and grid must be 1-D arrays of equal length >= 5")
    dq = np.diff(q)
    if not np.allclose(dq, dq[0], rtol=1e-9, atol=0):
        raise ParameterError("grid must be uniform")
    peak = float(p.max())
    if not peak > 0:
        raise ParameterError("pdf must be positive somewhere")
    if max(p[0], p[-1]) > BOUNDARY_LIMIT * peak:
        raise ParameterError("density at the grid boundary exceeds 1e-8 of the peak; widen the grid")
    dp = np.gradient(p, dq[0])
    keep = p > EXCLUDE_BELOW * peak
    integrand = np.where(keep, dp * dp / np.where(keep, p, 1.0), 0.0)
    return float(trapezoid(integrand, q))


def gaussian_translation_fisher(var: float) -> float:
    return 1.0 / var


def _check_frame(rho: DensityMatrix, omega: float) -> None:
    if rho.frame_omega is not None and not math.isclose(rho.frame_omega, omega, rel_tol=1e-9):
        raise FrameMismatchError(
            f"density matrix frame omega={rho.frame_omega:.6g} rad/s, protocol expects {omega:.6g} rad/s")


def fisher_sensitivity(rho: DensityMatrix, cfg: ProtocolConfig, with_prep: bool = True,
                       variant: str = "homodyne", t_sp: float | None = None,
                       n_grid: int = 2001, width: float = 10.0) -> FisherResult:
    """Tilt and force Fisher information of one position readout for state ``rho``.

    ``t_sp`` defaults to a quarter period of the shallow trap with preparation
    and to zero without. The density is evaluated on ``n_grid`` points spanning
    +-``width`` times the largest quadrature standard deviation.
    """
    omega = cfg.sp_frequency(with_prep)
    _check_frame(rho, omega)
    if not cfg.t_tof > 0:
        raise ParameterError("Fisher information needs t_tof > 0")
    if omega * cfg.t_tof < 5:
        warnings.warn(f"omega * t_tof = {omega * cfg.t_tof:.3g} < 5: long-flight regime not reached",
                      stacklevel=2)
    if t_sp is None:
        t_sp = quarter_period(cfg.omega1) if with_prep else 0.0
    t = cfg.t_tof
    g_proj = cfg.g  # small-angle convention: F = m g theta
    if variant == "homodyne":
        phi = float(phase_of(t_sp, cfg.replace(t_sp=t_sp), with_prep))
        scale = _quadrature_scale(cfg, with_prep)
        d_theta = cfg.mass * g_proj * susceptibility_theory(cfg, with_prep)
    elif variant == "long_tof":
        phi = omega * t_sp
        scale = (t / cfg.mass) * math.sqrt(HBAR * cfg.mass * omega / 2.0)
        d_theta = g_proj * t * math.sin(omega * t_sp) / omega + 0.5 * g_proj * t * t
    else:
        raise ParameterError(f"unknown variant {variant!r}")

    mz, mp, cov = moments(rho)
    centre = -mz * math.sin(phi) + mp * math.cos(phi)
    spread = math.sqrt(float(np.linalg.eigvalsh(cov)[-1]))
    grid = centre + np.linspace(-width * spread, width * spread, n_grid)
    info = translation_fisher(quadrature_pdf(rho, phi, grid), grid)
    f_theta = (d_theta / scale) ** 2 * info
    f_force = f_theta / (cfg.mass * g_proj) ** 2
    return FisherResult(f_theta, f_force, 1.0 / math.sqrt(f_force), info, phi, variant, with_prep)


# --------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class BootstrapSettings:
    n_boot: int = 200
    seed: int = 0
    warm_start: bool = True
    audit: int = 10
    audit_tolerance: float = 0.01
    max_failure_fraction: float = 0.10
    mle: MleSettings = MleSettings()
    variant: str = "homodyne"
    warm_tighten: float = 0.1

    def __post_init__(self):
        if self.n_boot < 1:
            raise ParameterError("n_boot must be >= 1")
        if not 0 < self.warm_tighten <= 1:
            raise ParameterError("warm_tighten must lie in (0, 1]")

    def resample_mle(self) -> MleSettings:
        """Settings for resample reconstructions.

        The stopping rule looks at per-step changes, which are small from the
        start when iterating from the direct estimate; warm-started resamples
        therefore use thresholds scaled by ``warm_tighten``.
        """
        if not self.warm_start:
            return self.mle
        return replace(self.mle, threshold_distance=self.mle.threshold_distance * self.warm_tighten,
                       threshold_loglik=self.mle.threshold_loglik * self.warm_tighten)


def _centred(samples: QuadratureSamples) -> QuadratureSamples:
    if samples.meta.get("centered"):
        return samples
    vals = [np.asarray(v, float) - np.mean(v) for v in samples.values]
    return QuadratureSamples(samples.phases, vals, {**samples.meta, "centered": True})


def bootstrap_fisher(samples: QuadratureSamples, cfg: ProtocolConfig, settings: BootstrapSettings | None = None,
                     with_prep: bool = True) -> FisherResult:
    """Fisher sensitivity with a bootstrap distribution over within-phase resamples.

    The bin width is fixed by the original data, so every resample reuses the
    original projector cache (extended if a resample reaches new bins). With
    ``warm_start`` each resample starts from the direct reconstruction; the
    first ``audit`` resamples are also reconstructed from the maximally mixed
    state and must agree in S to ``audit_tolerance``.
    """
    settings = settings or BootstrapSettings()
    if any(len(v) < 2 for v in samples.values):
        raise InsufficientDataError("bootstrap needs >= 2 raw samples per phase")
    base = _centred(samples)
    sino = bin_quadratures(base)
    cache = cache_for(sino, settings.mle.n_max)
    mle_b = settings.resample_mle()
    # the direct estimate is held to the same thresholds as the resamples
    direct_rec = reconstruct(sino, mle_b, cache=cache)
    direct = fisher_sensitivity(direct_rec.rho, cfg, with_prep, settings.variant)

    values, failures, audit_diffs = [], [], []
    for b in range(settings.n_boot):
        gen = rng.stream(settings.seed, "bootstrap", b)
        vals = [np.asarray(v)[gen.integers(0, len(v), len(v))] for v in samples.values]
        resample = _centred(QuadratureSamples(samples.phases, vals, {**samples.meta, "centered": False}))
        try:
            rs = bin_quadratures(resample, delta=sino.delta)
            cache = cache_for(rs, settings.mle.n_max, cache)
            init = direct_rec.rho if settings.warm_start else None
            rec = reconstruct(rs, mle_b, initial=init, cache=cache)
            s_b = fisher_sensitivity(rec.rho, cfg, with_prep, settings.variant).sensitivity
            if b < settings.audit and settings.warm_start:
                cold = reconstruct(rs, mle_b, cache=cache)
                s_cold = fisher_sensitivity(cold.rho, cfg, with_prep, settings.variant).sensitivity
                audit_diffs.append(abs(s_b - s_cold) / s_cold)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            failures.append({"resample": b, "error": f"{type(exc).__name__}: {exc}"})
            log.warning("bootstrap resample %d failed: %s", b, exc)
            continue
        values.append(s_b)
        if len(failures) > settings.max_failure_fraction * settings.n_boot:
            raise InsufficientDataError(
                f"{len(failures)} of {b + 1} bootstrap resamples failed", offending=failures)
    if len(failures) > settings.max_failure_fraction * settings.n_boot:
        raise InsufficientDataError(f"{len(failures)} of {settings.n_boot} bootstrap resamples failed",
                                    offending=failures)
    arr = np.asarray(values)
    lo, hi = np.quantile(arr, [0.16, 0.84])
    direct.boot_mean = float(arr.mean())
    direct.boot_interval = (float(lo), float(hi))
    direct.boot_values = arr.tolist()
    direct.n_boot = len(values)
    direct.n_failed = len(failures)
    direct.degenerate_interval = len(values) < 2 or hi == lo
    if audit_diffs:
        direct.audit = {"resamples": len(audit_diffs), "max_relative_difference": max(audit_diffs),
                        "passed": max(audit_diffs) <= settings.audit_tolerance}
    return direct
