"""Gaussian dynamics of the z-axis centre-of-mass mode.

The protocol is a sequence of affine symplectic maps acting on a Gaussian
(mean, covariance) pair in SI units:

    thermal state in the omega0 trap
      -> evolution in the shallow trap for t_sp (state preparation)
      -> free flight for t_tof under the projected gravity g sin(theta)

Background-gas heating enters as additive covariance terms evaluated from
closed-form integrals of the momentum diffusion 2 m k_B Gamma_BG.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .constants import (G_TOKYO, GAMMA_BG, HBAR, K_B, MASS, NOISE_FLOOR,
                        OCCUPATION, OMEGA0, OMEGA1, T_TOF)
from .errors import ParameterError

__all__ = [
    "ProtocolConfig", "GaussianState", "AffineMap", "thermal_state",
    "state_prep_map", "tof_map", "propagate", "heating_sp", "heating_tof",
    "run_protocol", "susceptibility_theory", "sensitivity_theory",
    "squeezing_parameter", "sigma_z_min_model", "sigma_z_heating_model",
    "gravity_offset", "quarter_period",
]


@dataclass(frozen=True)
class ProtocolConfig:
    """Physical parameters of the squeeze/release/recapture sequence (SI units).

    ``theta`` is the tilt of the lattice axis, so the force along z is
    ``mass * g * sin(theta)``. ``gamma_bg`` is the background-gas heating rate
    in K/s and ``noise_floor`` the additive readout noise (std, metres).
    """

    mass: float = MASS
    omega0: float = OMEGA0
    omega1: float = OMEGA1
    t_sp: float = 0.0
    t_tof: float = T_TOF
    g: float = G_TOKYO
    theta: float = math.radians(-2.62)
    n: float = OCCUPATION
    gamma_bg: float = GAMMA_BG
    noise_floor: float = NOISE_FLOOR

    def __post_init__(self):
        bad = []
        if not self.mass > 0:
            bad.append(f"mass must be > 0 (got {self.mass})")
        if not self.omega1 > 0:
            bad.append(f"omega1 must be > 0 (got {self.omega1})")
        if not self.omega0 > self.omega1:
            bad.append(f"omega0 must exceed omega1 (got {self.omega0} <= {self.omega1})")
        if not self.t_sp >= 0:
            bad.append(f"t_sp must be >= 0 (got {self.t_sp})")
        if not self.t_tof >= 0:
            bad.append(f"t_tof must be >= 0 (got {self.t_tof})")
        if not self.n >= 0:
            bad.append(f"n must be >= 0 (got {self.n})")
        if not self.gamma_bg >= 0:
            bad.append(f"gamma_bg must be >= 0 (got {self.gamma_bg})")
        if not self.noise_floor >= 0:
            bad.append(f"noise_floor must be >= 0 (got {self.noise_floor})")
        if bad:
            raise ParameterError("; ".join(bad))

    @property
    def kappa(self) -> float:
        return 2.0 * self.n + 1.0

    @property
    def force(self) -> float:
        """Static force along z, m g sin(theta) [N]."""
        return self.mass * self.g * math.sin(self.theta)

    def replace(self, **changes) -> "ProtocolConfig":
        return dataclasses.replace(self, **changes)

    def sp_frequency(self, with_prep: bool = True) -> float:
        """Trap frequency during the interval before release."""
        return self.omega1 if with_prep else self.omega0


@dataclass(frozen=True)
class GaussianState:
    """Mean and covariance of (z, p) in SI units."""

    mean_z: float
    mean_p: float
    cov: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (2, 2):
            raise ParameterError(f"covariance must be 2x2, got shape {cov.shape}")
        scale = max(abs(cov[0, 1]), abs(cov[1, 0]), math.sqrt(abs(cov[0, 0] * cov[1, 1])))
        if abs(cov[0, 1] - cov[1, 0]) > 1e-12 * max(scale, 1e-300):
            raise ParameterError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        if cov[0, 0] < 0 or cov[1, 1] < 0 or np.linalg.det(cov) < -1e-12 * scale**2:
            raise ParameterError("covariance must be positive semidefinite")
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_z, self.mean_p])

    @property
    def var_z(self) -> float:
        return float(self.cov[0, 0])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.cov))

    def heisenberg_ratio(self) -> float:
        """det(cov) / (hbar/2)^2, which is >= 1 for a physical state."""
        return self.det / (HBAR / 2.0) ** 2


@dataclass(frozen=True)
class AffineMap:
    """x -> linear @ x + shift on the (z, p) phase space."""

    linear: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float)
        sh = np.array(self.shift, dtype=float)
        lin.setflags(write=False)
        sh.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "shift", sh)

    def then(self, other: "AffineMap") -> "AffineMap":
        """Composition: apply ``self`` first, then ``other``."""
        return AffineMap(other.linear @ self.linear, other.linear @ self.shift + other.shift)


def quarter_period(omega: float) -> float:
    return math.pi / (2.0 * omega)


def gravity_offset(cfg: ProtocolConfig) -> float:
    """Gravity-shifted equilibrium position in the omega0 trap."""
    return cfg.g * math.sin(cfg.theta) / cfg.omega0**2


def thermal_state(cfg: ProtocolConfig, trap_frequency: float) -> GaussianState:
    """Thermal state of occupation ``cfg.n`` centred on the sagged equilibrium."""
    if not trap_frequency > 0:
        raise ParameterError(f"trap frequency must be > 0 (got {trap_frequency})")
    w = trap_frequency
    k = cfg.kappa
    cov = np.diag([k * HBAR / (2.0 * cfg.mass * w), k * HBAR * cfg.mass * w / 2.0])
    return GaussianState(cfg.g * math.sin(cfg.theta) / w**2, 0.0, cov)


def _oscillator_map(mass: float, omega: float, t: float, accel: float) -> AffineMap:
    c, s = math.cos(omega * t), math.sin(omega * t)
    linear = np.array([[c, s / (mass * omega)], [-mass * omega * s, c]])
    shift = np.array([accel * (1.0 - c) / omega**2, mass * accel * s / omega])
    return AffineMap(linear, shift)


def state_prep_map(cfg: ProtocolConfig, with_prep: bool = True) -> AffineMap:
    """Harmonic evolution for ``cfg.t_sp`` in the shallow (or unchanged) trap."""
    accel = cfg.g * math.sin(cfg.theta)
    return _oscillator_map(cfg.mass, cfg.sp_frequency(with_prep), cfg.t_sp, accel)


def tof_map(cfg: ProtocolConfig) -> AffineMap:
    """Ballistic flight for ``cfg.t_tof`` under the projected gravity."""
    t = cfg.t_tof
    accel = cfg.g * math.sin(cfg.theta)
    linear = np.array([[1.0, t / cfg.mass], [0.0, 1.0]])
    shift = np.array([0.5 * accel * t**2, cfg.mass * accel * t])
    return AffineMap(linear, shift)


def propagate(state: GaussianState, amap: AffineMap) -> GaussianState:
    mean = amap.linear @ state.mean + amap.shift
    cov = amap.linear @ state.cov @ amap.linear.T
    return GaussianState(mean[0], mean[1], cov)


def heating_sp(cfg: ProtocolConfig, with_prep: bool = True) -> np.ndarray:
    """Covariance added by gas collisions while held in the trap for t_sp."""
    w = cfg.sp_frequency(with_prep)
    t = cfg.t_sp
    kg = K_B * cfg.gamma_bg
    s2 = math.sin(2.0 * w * t)
    vzz = kg / (cfg.mass * w**2) * (t - s2 / (2.0 * w))
    vzp = kg / (2.0 * w**2) * (1.0 - math.cos(2.0 * w * t))
    vpp = cfg.mass * kg * (t + s2 / (2.0 * w))
    return np.array([[vzz, vzp], [vzp, vpp]])


def heating_tof(cfg: ProtocolConfig) -> np.ndarray:
    """Covariance added by gas collisions during free flight."""
    t = cfg.t_tof
    kg = K_B * cfg.gamma_bg
    return np.array([[2.0 * kg * t**3 / (3.0 * cfg.mass), kg * t**2],
                     [kg * t**2, 2.0 * cfg.mass * kg * t]])


def run_protocol(cfg: ProtocolConfig, with_prep: bool = True) -> GaussianState:
    """State at the end of the flight, t = t_sp + t_tof."""
    state = thermal_state(cfg, cfg.omega0)
    state = propagate(state, state_prep_map(cfg, with_prep))
    state = GaussianState(state.mean_z, state.mean_p, state.cov + heating_sp(cfg, with_prep))
    state = propagate(state, tof_map(cfg))
    return GaussianState(state.mean_z, state.mean_p, state.cov + heating_tof(cfg))


def susceptibility_theory(cfg: ProtocolConfig, with_prep: bool = True) -> float:
    """Small-angle displacement response d(mu_z)/dF [m/N].

    With preparation the hold time is a quarter period of the shallow trap;
    without, the particle is released directly from the omega0 trap.
    """
    t = cfg.t_tof
    if not with_prep:
        return t**2 / (2.0 * cfg.mass)
    w0, w1 = cfg.omega0, cfg.omega1
    return ((1.0 + w1 * t) * (1.0 / w1**2 - 1.0 / w0**2) + 0.5 * t**2) / cfg.mass


def sensitivity_theory(cfg: ProtocolConfig, with_prep: bool = True) -> float:
    """Single-shot force sensitivity sigma_z / |d mu_z / dF| [N]."""
    if not cfg.t_tof > 0:
        raise ParameterError("susceptibility is undefined for t_tof = 0")
    t_sp = quarter_period(cfg.omega1) if with_prep else 0.0
    final = run_protocol(cfg.replace(t_sp=t_sp), with_prep=with_prep)
    return math.sqrt(final.var_z) / abs(susceptibility_theory(cfg, with_prep))


def squeezing_parameter(omega0: float, omega1: float) -> float:
    if not (omega0 >= omega1 > 0):
        raise ParameterError("need omega0 >= omega1 > 0")
    return 0.5 * math.log(omega0 / omega1)


def sigma_z_min_model(r: float, cfg: ProtocolConfig) -> float:
    """Position spread after flight at the quarter-period hold, as a function of r."""
    if r < 0:
        raise ParameterError("squeezing parameter must be >= 0")
    zpf2 = cfg.kappa * HBAR / (2.0 * cfg.mass * cfg.omega0)
    wt = cfg.omega0 * cfg.t_tof
    return math.sqrt(zpf2 * (math.exp(4.0 * r) + wt**2 * math.exp(-4.0 * r)))


def sigma_z_heating_model(t_tof, n: float, gamma_bg: float, cfg: ProtocolConfig,
                          with_prep: bool = True):
    """sigma_z after flight including gas heating during the flight only.

    Vectorised over ``t_tof``. With preparation the hold is a quarter period.
    """
    t = np.asarray(t_tof, dtype=float)
    kappa = 2.0 * n + 1.0
    zpf2 = kappa * HBAR / (2.0 * cfg.mass * cfg.omega0)
    if with_prep:
        base = zpf2 * ((cfg.omega0 / cfg.omega1) ** 2 + (cfg.omega1 * t) ** 2)
    else:
        base = zpf2 * (1.0 + (cfg.omega0 * t) ** 2)
    return np.sqrt(base + 2.0 * K_B * gamma_bg * t**3 / (3.0 * cfg.mass))
