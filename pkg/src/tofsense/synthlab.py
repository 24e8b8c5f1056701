"""Synthetic measurement records: single shots, sinograms and force time series."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .constants import HBAR
from .errors import InsufficientDataError, ParameterError
from .phasespace import (ProtocolConfig, gravity_offset, quarter_period, run_protocol,
                         susceptibility_theory)

__all__ = [
    "ShotRecord", "Shots", "QuadratureSamples", "Sinogram", "sample_shots",
    "scan_shots", "phase_of", "quadratures_from_shots", "bin_quadratures",
    "build_sinogram", "sample_gaussian_quadratures", "timeseries_for_allan",
    "tomography_t_sp", "DEGENERATE_DELTA",
]

DEGENERATE_DELTA = 1e-6


@dataclass(frozen=True)
class ShotRecord:
    t_sp: float
    t_tof: float
    z_meas: float

    @property
    def v_meas(self) -> float:
        if not self.t_tof > 0:
            raise ParameterError("velocity needs t_tof > 0")
        return self.z_meas / self.t_tof


@dataclass(frozen=True)
class Shots:
    """Column-oriented batch of shot records (signed positions)."""

    t_sp: np.ndarray
    t_tof: np.ndarray
    z_meas: np.ndarray
    seed: int | None = None

    def __len__(self):
        return len(self.z_meas)

    @property
    def v_meas(self) -> np.ndarray:
        if np.any(self.t_tof <= 0):
            raise ParameterError("velocity needs t_tof > 0")
        return self.z_meas / self.t_tof

    @property
    def abs_z(self) -> np.ndarray:
        """The folded readout |z_meas| recorded by the amplitude detector."""
        return np.abs(self.z_meas)

    def records(self) -> list[ShotRecord]:
        return [ShotRecord(float(a), float(b), float(c))
                for a, b, c in zip(self.t_sp, self.t_tof, self.z_meas)]

    @classmethod
    def concat(cls, parts) -> "Shots":
        parts = list(parts)
        return cls(np.concatenate([p.t_sp for p in parts]),
                   np.concatenate([p.t_tof for p in parts]),
                   np.concatenate([p.z_meas for p in parts]),
                   parts[0].seed if parts else None)


@dataclass
class QuadratureSamples:
    """Raw zpf-normalised quadrature outcomes grouped by phase."""

    phases: np.ndarray
    values: list
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(sum(len(v) for v in self.values))

    def flat(self):
        """(p, phi) arrays with one entry per outcome."""
        p = np.concatenate(self.values)
        phi = np.concatenate([np.full(len(v), ph) for v, ph in zip(self.values, self.phases)])
        return p, phi


@dataclass
class Sinogram:
    """Phase-resolved histograms sharing one bin width ``delta``."""

    phases: np.ndarray
    centers: list
    counts: list
    delta: float
    meta: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        self.centers = [np.asarray(c, dtype=float) for c in self.centers]
        self.counts = [np.asarray(c, dtype=float) for c in self.counts]
        if not self.delta > 0:
            raise ParameterError("bin width must be > 0")
        if len(self.centers) != len(self.phases) or len(self.counts) != len(self.phases):
            raise ParameterError("one histogram per phase required")
        for i, (c, f) in enumerate(zip(self.centers, self.counts)):
            if c.shape != f.shape:
                raise ParameterError(f"phase {i}: centers and counts differ in length")
            if np.any(f < 0):
                raise ParameterError(f"phase {i}: negative counts")
            if f.sum() <= 0:
                raise ParameterError(f"phase {i}: empty histogram")

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    @property
    def total(self) -> float:
        return float(sum(f.sum() for f in self.counts))

    def to_dict(self) -> dict:
        return {
            "phases": self.phases.tolist(),
            "delta": self.delta,
            "histograms": [{"centers": c.tolist(), "counts": [int(x) if float(x).is_integer() else x for x in f.tolist()]}
                           for c, f in zip(self.centers, self.counts)],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Sinogram":
        hists = obj["histograms"]
        return cls(np.asarray(obj["phases"], dtype=float),
                   [h["centers"] for h in hists], [h["counts"] for h in hists],
                   float(obj["delta"]), dict(obj.get("meta", {})))


def sample_shots(cfg: ProtocolConfig, count: int, seed: int, with_prep: bool = True,
                 _index: int = 0) -> Shots:
    """Draw ``count`` final positions from the Gaussian law of the protocol plus readout noise."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    final = run_protocol(cfg, with_prep)
    gen = rng.stream(seed, "shots", _index)
    z = final.mean_z + math.sqrt(final.var_z) * gen.standard_normal(count)
    if cfg.noise_floor > 0:
        z = z + cfg.noise_floor * gen.standard_normal(count)
    return Shots(np.full(count, cfg.t_sp), np.full(count, cfg.t_tof), z, seed)


def tomography_t_sp(cfg: ProtocolConfig, n_phases: int = 300, span: float = math.pi,
                    with_prep: bool = True) -> np.ndarray:
    """Hold times whose rotation angles cover [0, span) in ``n_phases`` steps."""
    w = cfg.sp_frequency(with_prep)
    return np.arange(n_phases) * (span / n_phases) / w


def scan_shots(cfg: ProtocolConfig, t_sp_values, shots_per_phase: int, seed: int,
               with_prep: bool = True) -> Shots:
    """Shots for each hold time, each block from its own indexed substream."""
    return Shots.concat(sample_shots(cfg.replace(t_sp=float(t)), shots_per_phase, seed, with_prep, _index=i)
                        for i, t in enumerate(t_sp_values))


def phase_of(t_sp, cfg: ProtocolConfig, with_prep: bool = True):
    """Quadrature angle probed by a release after hold time ``t_sp``."""
    if not cfg.t_tof > 0:
        raise ParameterError("phase mapping needs t_tof > 0")
    w = cfg.sp_frequency(with_prep)
    return w * np.asarray(t_sp, dtype=float) - math.atan(1.0 / (w * cfg.t_tof))


def _quadrature_scale(cfg: ProtocolConfig, with_prep: bool) -> float:
    w = cfg.sp_frequency(with_prep)
    return math.sqrt(HBAR / (2.0 * cfg.mass * w)) * math.sqrt(1.0 + (w * cfg.t_tof) ** 2)


def quadratures_from_shots(shots: Shots, cfg: ProtocolConfig, with_prep: bool = True,
                           center: bool = True) -> QuadratureSamples:
    """Group shots by hold time and map positions onto zpf-normalised quadratures."""
    t_unique = np.unique(shots.t_sp)
    scale = _quadrature_scale(cfg, with_prep)
    values = []
    for t in t_unique:
        p = shots.z_meas[shots.t_sp == t] / scale
        if center and len(p):
            p = p - p.mean()
        values.append(p)
    meta = {"omega": cfg.sp_frequency(with_prep), "t_tof": cfg.t_tof,
            "centered": bool(center), "seed": shots.seed, "with_prep": bool(with_prep)}
    return QuadratureSamples(phase_of(t_unique, cfg, with_prep), values, meta)


def bin_quadratures(samples: QuadratureSamples, delta: float | None = None,
                    delta_factor: float = 0.2) -> Sinogram:
    """Histogram every phase on the common grid of centres k * delta.

    Without an explicit ``delta`` the width is ``delta_factor`` times the
    smallest per-phase sample standard deviation.
    """
    bad = [i for i, v in enumerate(samples.values) if len(v) < 2]
    if len(samples.values) < 2 or bad:
        raise InsufficientDataError(
            f"need >= 2 phases with >= 2 shots each; offending phases: {bad}", offending=bad)
    warnings = []
    if delta is None:
        smin = min(float(np.std(v, ddof=1)) for v in samples.values)
        if smin > 0:
            delta = delta_factor * smin
        else:
            delta = DEGENERATE_DELTA
            warnings.append("constant data: bin width fell back to %g" % DEGENERATE_DELTA)
    centers, counts = [], []
    for v in samples.values:
        k = np.rint(np.asarray(v) / delta).astype(np.int64)
        lo, hi = k.min(), k.max()
        centers.append(np.arange(lo, hi + 1) * delta)
        counts.append(np.bincount(k - lo, minlength=hi - lo + 1).astype(float))
    return Sinogram(np.asarray(samples.phases, dtype=float), centers, counts, float(delta),
                    dict(samples.meta), warnings)


def build_sinogram(shots: Shots, cfg: ProtocolConfig, with_prep: bool = True) -> Sinogram:
    return bin_quadratures(quadratures_from_shots(shots, cfg, with_prep, center=True))


def sample_gaussian_quadratures(mean, cov, phases, shots_per_phase: int, seed: int,
                                frame_omega: float | None = None) -> QuadratureSamples:
    """Quadrature outcomes of a Gaussian state given by dimensionless (z1, p1) moments."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    values = []
    for i, phi in enumerate(np.asarray(phases, dtype=float)):
        u = np.array([-math.sin(phi), math.cos(phi)])
        gen = rng.stream(seed, "quadratures", i)
        values.append(u @ mean + math.sqrt(u @ cov @ u) * gen.standard_normal(shots_per_phase))
    meta = {"omega": frame_omega, "centered": False, "seed": seed}
    return QuadratureSamples(np.asarray(phases, dtype=float), values, meta)


def timeseries_for_allan(cfg: ProtocolConfig, duration: float, f_s: float, seed: int,
                         with_prep: bool = True, drift_rate: float = 0.0,
                         drift_amplitude: float = 0.0, drift_period: float = 3600.0):
    """Per-shot force estimates sampled at ``f_s`` for ``duration`` seconds.

    Each shot uses the sensing hold (a quarter period of the shallow trap with
    preparation, none without), as in sensitivity_theory. Returns (times,
    forces). Optional drift in newtons: ``drift_rate`` * t plus
    ``drift_amplitude`` * sin(2 pi t / drift_period).
    """
    count = int(round(duration * f_s))
    if count < 10:
        raise ParameterError("duration * f_s must be >= 10")
    cfg = cfg.replace(t_sp=quarter_period(cfg.omega1) if with_prep else 0.0)
    shots = sample_shots(cfg, count, seed, with_prep)
    chi = susceptibility_theory(cfg, with_prep)
    t = np.arange(count) / f_s
    force = (shots.z_meas - gravity_offset(cfg)) / chi
    force = force + drift_rate * t + drift_amplitude * np.sin(2.0 * math.pi * t / drift_period)
    return t, force
