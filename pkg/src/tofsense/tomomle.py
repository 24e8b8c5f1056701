"""Maximum-likelihood state reconstruction from binned homodyne histograms.

The iteration is rho <- N[R_d rho R_d] with the diluted operator
R_d = I + eps (R - I) and R = (1/N) sum_ij f_ij Pi_ij / Tr(Pi_ij rho).

A bin projector factorises as Pi_ij = U_i G_j U_i^dagger, where U_i is the
diagonal phase rotation of phase i and G_j is the real Gram matrix of the
oscillator eigenfunctions over bin j. Histograms in a Sinogram share one grid,
so the Gram matrices are computed once per distinct bin centre and every
probability Tr(Pi_ij rho) comes out of a single matrix product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SupportError
from .fockstate import TAIL_LIMIT, DensityMatrix, bin_grams
from .synthlab import Sinogram

log = logging.getLogger(__name__)

__all__ = ["MleSettings", "MleResult", "ProjectorCache", "r_bin", "mle_step",
           "reconstruct", "log_likelihood", "point_log_likelihood",
           "distinct_phase_count", "cache_for", "PROB_FLOOR"]

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class MleSettings:
    epsilon: float = 0.1
    n_max: int = 23
    threshold_distance: float = 3e-4
    threshold_loglik: float = 4e-5
    max_iterations: int = 5000
    max_halvings: int = 30

    def __post_init__(self):
        if not (0 < self.epsilon <= 1):
            raise ParameterError("epsilon must lie in (0, 1]")
        if self.threshold_distance <= 0 or self.threshold_loglik <= 0:
            raise ParameterError("convergence thresholds must be > 0")
        if self.n_max < 1 or self.max_iterations < 1:
            raise ParameterError("n_max and max_iterations must be >= 1")

    @classmethod
    def thermal(cls, **kw) -> "MleSettings":
        return cls(**{"n_max": 23, "threshold_distance": 3e-4, "threshold_loglik": 4e-5, **kw})

    @classmethod
    def squeezed(cls, **kw) -> "MleSettings":
        return cls(**{"n_max": 70, "threshold_distance": 9e-5, "threshold_loglik": 8e-6, **kw})

    @classmethod
    def profile(cls, name: str, **kw) -> "MleSettings":
        if name == "thermal":
            return cls.thermal(**kw)
        if name == "squeezed":
            return cls.squeezed(**kw)
        if name == "custom":
            return cls(**kw)
        raise ParameterError(f"unknown profile {name!r}")


@dataclass
class MleResult:
    rho: DensityMatrix
    iterations: int
    loglik: float
    converged_distance: bool
    converged_loglik: bool
    truncation_ok: bool
    final_distance: float
    final_relative_change: float
    epsilon: float
    identifiable: bool = True
    loglik_trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.converged_distance and self.converged_loglik

    def report(self) -> dict:
        return {
            "iterations": self.iterations,
            "loglik": self.loglik,
            "converged": self.converged,
            "converged_distance": self.converged_distance,
            "converged_loglik": self.converged_loglik,
            "truncation_ok": self.truncation_ok,
            "truncation_tail": self.rho.tail,
            "final_distance": self.final_distance,
            "final_relative_loglik_change": self.final_relative_change,
            "final_epsilon": self.epsilon,
            "identifiable": self.identifiable,
            "n_max": self.rho.n_max,
        }


class ProjectorCache:
    """Gram matrices and phase factors for every bin of one sinogram at one cutoff."""

    def __init__(self, sinogram: Sinogram, n_max: int, keys=None):
        self.n_max = n_max
        self.dim = d = n_max + 1
        self.delta = delta = sinogram.delta
        if keys is None:
            keys = np.unique(np.concatenate([self._keys_of(c, delta) for c in sinogram.centers]))
        self.keys = np.asarray(keys, dtype=np.int64)
        centers = self.keys * delta
        grams = bin_grams(centers - 0.5 * delta, centers + 0.5 * delta, n_max)
        self.grams_flat = grams.reshape(len(self.keys), d * d)
        self._bind(sinogram)

    @staticmethod
    def _keys_of(centers, delta):
        return np.rint(np.asarray(centers) / delta).astype(np.int64)

    def _bind(self, sinogram: Sinogram) -> None:
        d = self.dim
        self.counts = np.zeros((sinogram.n_phases, len(self.keys)))
        for i, (c, f) in enumerate(zip(sinogram.centers, sinogram.counts)):
            self.counts[i, np.searchsorted(self.keys, self._keys_of(c, self.delta))] += f
        self.total = float(self.counts.sum())
        self.populated = self.counts > 0
        idx = np.arange(d)
        diff = idx[:, None] - idx[None, :]
        theta = sinogram.phases + 0.5 * math.pi
        self.phase_factors = np.exp(1j * theta[:, None] * diff.reshape(1, -1))  # (I, d*d)
        self.phases = sinogram.phases
        self.source = sinogram

    def covers(self, sinogram: Sinogram) -> bool:
        if not math.isclose(sinogram.delta, self.delta, rel_tol=1e-12):
            return False
        keys = np.unique(np.concatenate([self._keys_of(c, self.delta) for c in sinogram.centers]))
        return bool(np.all(np.isin(keys, self.keys)))

    def rebind(self, sinogram: Sinogram) -> "ProjectorCache":
        """A cache for new counts on the same bin grid, sharing the Gram matrices."""
        if not self.covers(sinogram):
            return ProjectorCache(sinogram, self.n_max, np.union1d(
                self.keys, np.concatenate([self._keys_of(c, sinogram.delta) for c in sinogram.centers]))
                if math.isclose(sinogram.delta, self.delta, rel_tol=1e-12) else None)
        new = object.__new__(ProjectorCache)
        new.n_max, new.dim, new.delta = self.n_max, self.dim, self.delta
        new.keys, new.grams_flat = self.keys, self.grams_flat
        if np.array_equal(sinogram.phases, self.phases):
            new.phase_factors, new.phases = self.phase_factors, self.phases
            new.counts = np.zeros((sinogram.n_phases, len(self.keys)))
            for i, (c, f) in enumerate(zip(sinogram.centers, sinogram.counts)):
                new.counts[i, np.searchsorted(self.keys, self._keys_of(c, self.delta))] += f
            new.total = float(new.counts.sum())
            new.populated = new.counts > 0
            new.source = sinogram
        else:
            new._bind(sinogram)
        return new

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """Tr(Pi_ij rho) for every phase i and distinct bin j."""
        x = np.ascontiguousarray((self.phase_factors * rho.T.reshape(1, -1)).real)
        return x @ self.grams_flat.T

    def check_support(self, probs: np.ndarray) -> None:
        bad = self.populated & (probs < PROB_FLOOR)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise SupportError(
                f"populated bin has vanishing probability: phase index {i} (phi={self.phases[i]:.6g}), "
                f"bin centre index {int(self.keys[j])}", phase_index=int(i), bin_index=int(self.keys[j]))

    def r_operator(self, probs: np.ndarray) -> np.ndarray:
        self.check_support(probs)
        w = np.where(self.populated, self.counts / np.maximum(probs, PROB_FLOOR), 0.0)
        m = w @ self.grams_flat                                  # (I, d*d)
        r = np.einsum("ik,ik->k", self.phase_factors, m).reshape(self.dim, self.dim)
        r = r / self.total
        return 0.5 * (r + r.conj().T)

    def loglik(self, probs: np.ndarray) -> float:
        pos = self.populated
        if np.any(probs[pos] <= 0):
            i, j = np.argwhere(pos & (probs <= 0))[0]
            log.warning("populated bin with zero probability: phase index %d, bin centre index %d",
                        i, int(self.keys[j]))
            return -math.inf
        return float(np.sum(self.counts[pos] * np.log(probs[pos])))


def distinct_phase_count(phases, tol: float = 1e-9) -> int:
    """Number of distinct quadrature angles modulo pi."""
    wrapped = np.sort(np.mod(np.asarray(phases, dtype=float), math.pi))
    if wrapped.size == 0:
        return 0
    gaps = np.diff(np.r_[wrapped, wrapped[0] + math.pi])
    return max(1, int(np.count_nonzero(gaps > tol)))


def _cache_for(sinogram, n_max, cache):
    if cache is not None and cache.n_max == n_max and cache.source is sinogram:
        return cache
    return cache_for(sinogram, n_max, cache)


def cache_for(sinogram: Sinogram, n_max: int, cache: ProjectorCache | None = None) -> ProjectorCache:
    """Projector cache bound to ``sinogram``, reusing ``cache``'s Gram matrices when possible."""
    if cache is None or cache.n_max != n_max:
        return ProjectorCache(sinogram, n_max)
    return cache.rebind(sinogram)


def r_bin(rho: DensityMatrix, sinogram: Sinogram, cache: ProjectorCache | None = None) -> np.ndarray:
    """R_bin(rho) = (1/N) sum_ij f_ij Pi_ij / Tr(Pi_ij rho)."""
    cache = _cache_for(sinogram, rho.n_max, cache)
    return cache.r_operator(cache.probabilities(rho.data))


def log_likelihood(rho: DensityMatrix, sinogram: Sinogram, cache: ProjectorCache | None = None) -> float:
    """sum_ij f_ij ln Tr(Pi_ij rho); -inf if a populated bin has zero probability."""
    cache = _cache_for(sinogram, rho.n_max, cache)
    return cache.loglik(cache.probabilities(rho.data))


def _step(rho: np.ndarray, r: np.ndarray, eps: float) -> np.ndarray:
    rd = np.eye(rho.shape[0]) + eps * (r - np.eye(rho.shape[0]))
    new = rd @ rho @ rd
    new = 0.5 * (new + new.conj().T)
    return new / np.trace(new).real


def mle_step(rho: DensityMatrix, sinogram: Sinogram, settings: MleSettings,
             cache: ProjectorCache | None = None) -> DensityMatrix:
    """One diluted iteration at ``settings.epsilon`` (no step-size control)."""
    r = r_bin(rho, sinogram, cache)
    return DensityMatrix(_step(rho.data, r, settings.epsilon), rho.frame_omega)


def reconstruct(sinogram: Sinogram, settings: MleSettings | None = None,
                initial: DensityMatrix | None = None,
                cache: ProjectorCache | None = None) -> MleResult:
    """Iterate from the maximally mixed state (or ``initial``) until both thresholds hold.

    If a step would lower the likelihood, epsilon is halved and the step retried.
    Non-convergence is reported through the result flags.
    """
    settings = settings or MleSettings()
    cache = _cache_for(sinogram, settings.n_max, cache)
    d = settings.n_max + 1
    frame = sinogram.meta.get("omega")
    rho = np.eye(d, dtype=complex) / d if initial is None else np.array(initial.data, dtype=complex)
    if rho.shape != (d, d):
        raise ParameterError(f"initial state has dim {rho.shape[0]}, settings need {d}")

    probs = cache.probabilities(rho)
    ll = cache.loglik(probs)
    trace = [ll]
    eps = settings.epsilon
    dist = rel = math.inf
    conv_d = conv_l = False
    it = 0
    for it in range(1, settings.max_iterations + 1):
        r = cache.r_operator(probs)
        for _ in range(settings.max_halvings + 1):
            new = _step(rho, r, eps)
            new_probs = cache.probabilities(new)
            new_ll = cache.loglik(new_probs)
            if new_ll >= ll - 1e-12 * abs(ll):
                break
            eps *= 0.5
            log.debug("likelihood decreased at iteration %d; epsilon -> %g", it, eps)
        else:
            log.warning("step size collapsed at iteration %d", it)
            break
        dist = float(np.max(np.abs(new - rho)))
        rel = abs((new_ll - ll) / ll) if ll != 0 else abs(new_ll - ll)
        rho, probs, ll = new, new_probs, new_ll
        trace.append(ll)
        conv_d = dist < settings.threshold_distance
        conv_l = rel < settings.threshold_loglik
        if conv_d and conv_l:
            break

    # Marginals at dim distinct angles fix every coherence order of a dim x dim state.
    identifiable = distinct_phase_count(sinogram.phases) >= d
    if not identifiable:
        log.warning("only %d distinct phases for dim %d: state is not identifiable",
                    distinct_phase_count(sinogram.phases), d)
    out = DensityMatrix(rho, frame)
    return MleResult(out, it, ll, conv_d, conv_l, out.tail < TAIL_LIMIT, dist, rel, eps,
                     identifiable, trace)


def point_log_likelihood(rho: DensityMatrix, p, phi) -> float:
    """Unbinned log-likelihood sum_i ln <p_i, phi_i| rho |p_i, phi_i>."""
    from .fockstate import ho_wavefunctions
    p = np.asarray(p, dtype=float)
    phi = np.asarray(phi, dtype=float)
    psi = ho_wavefunctions(rho.n_max, p)                      # (d, N)
    amp = psi * np.exp(1j * np.outer(np.arange(rho.dim), phi + 0.5 * math.pi))
    dens = np.einsum("mi,mn,ni->i", amp.conj(), rho.data, amp).real
    if np.any(dens <= 0):
        return -math.inf
    return float(np.sum(np.log(dens)))
