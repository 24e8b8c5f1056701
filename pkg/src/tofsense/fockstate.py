"""Truncated Fock-space states of a single oscillator mode.

Quadratures are normalised to the zero-point fluctuation so that the ground
state has unit variance: z1 = a + a^dagger, p1 = -i (a - a^dagger), and the
rotated quadrature measured at phase phi is p~(phi) = -z1 sin(phi) + p1 cos(phi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from .constants import HBAR
from .errors import ParameterError, TruncationError
from .phasespace import GaussianState

__all__ = [
    "DensityMatrix", "QuadratureBin", "WignerGrid", "ho_wavefunctions",
    "quadrature_overlap", "bin_projector", "bin_grams", "quadrature_pdf",
    "wigner", "laguerre_terms", "gaussian_to_density", "gaussian_density",
    "to_dimensionless", "moments", "fidelity", "fock_density",
    "thermal_density", "annihilation", "TAIL_LIMIT",
]

TAIL_LIMIT = 1e-4


@dataclass(frozen=True)
class DensityMatrix:
    """Density matrix in the Fock basis {|0>, ..., |n_max>}.

    ``frame_omega`` records the trap frequency whose zero-point fluctuation
    normalises the quadratures (None when unknown).
    """

    data: np.ndarray
    frame_omega: float | None = None

    def __post_init__(self):
        arr = np.array(self.data, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ParameterError(f"density matrix must be square, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_max(self) -> int:
        return self.dim - 1

    @property
    def tail(self) -> float:
        """Population of the highest retained Fock state."""
        return float(self.data[-1, -1].real)

    def check(self, atol: float = 1e-10) -> None:
        """Raise ParameterError unless Hermitian, unit-trace and PSD within ``atol``."""
        herm = np.max(np.abs(self.data - self.data.conj().T))
        if herm > atol:
            raise ParameterError(f"not Hermitian (max deviation {herm:.3g})")
        tr = np.trace(self.data).real
        if abs(tr - 1.0) > atol:
            raise ParameterError(f"trace is {tr!r}, expected 1")
        lam = np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T)).min()
        if lam < -atol:
            raise ParameterError(f"not positive semidefinite (min eigenvalue {lam:.3g})")

    def truncation_ok(self) -> bool:
        return self.tail < TAIL_LIMIT

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "re": self.data.real.ravel().tolist(),
            "im": self.data.imag.ravel().tolist(),
            "frame_omega": self.frame_omega,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DensityMatrix":
        dim = int(obj["dim"])
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj["im"], dtype=float)
        if re.size != dim * dim or im.size != dim * dim:
            raise ParameterError(f"expected {dim * dim} entries for dim={dim}")
        data = (re + 1j * im).reshape(dim, dim)
        return cls(data, obj.get("frame_omega"))


@dataclass(frozen=True)
class QuadratureBin:
    center: float
    width: float
    phase: float

    def __post_init__(self):
        if not self.width > 0:
            raise ParameterError(f"bin width must be > 0 (got {self.width})")

    @property
    def lower(self) -> float:
        return self.center - 0.5 * self.width

    @property
    def upper(self) -> float:
        return self.center + 0.5 * self.width


@dataclass(frozen=True)
class WignerGrid:
    """W(z1, p1) sampled on a rectangular grid; ``values[i, j] = W(z_axis[i], p_axis[j])``."""

    z_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def cell_area(self) -> float:
        return float((self.z_axis[1] - self.z_axis[0]) * (self.p_axis[1] - self.p_axis[0]))

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def marginal_p(self) -> np.ndarray:
        """Integral over z1 as a function of p1."""
        return self.values.sum(axis=0) * (self.z_axis[1] - self.z_axis[0])


# --------------------------------------------------------------------------
# special functions


def ho_wavefunctions(n_max: int, x) -> np.ndarray:
    """psi_m(x) for m = 0..n_max, normalised so |psi_0|^2 is a unit-variance normal.

    Uses psi_{m+1} = (x psi_m - sqrt(m) psi_{m-1}) / sqrt(m+1), which never forms
    2^m m! or H_m explicitly. Returns shape (n_max+1,) + x.shape.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = (2.0 * math.pi) ** -0.25 * np.exp(-0.25 * x * x)
    if n_max >= 1:
        out[1] = x * out[0]
    for m in range(1, n_max):
        out[m + 1] = (x * out[m] - math.sqrt(m) * out[m - 1]) / math.sqrt(m + 1)
    return out


def quadrature_overlap(m: int, p: float, phi: float) -> complex:
    """<m | p~, phi>, the Fock amplitude of the rotated-quadrature eigenstate."""
    if m < 0:
        raise ParameterError("Fock index must be >= 0")
    psi = ho_wavefunctions(m, np.asarray(p, dtype=float))[m]
    return np.exp(1j * m * (phi + 0.5 * math.pi)) * psi


def _phase_vector(dim: int, phi: float) -> np.ndarray:
    return np.exp(1j * np.arange(dim) * (phi + 0.5 * math.pi))


def _gauss_legendre_grams(lower, upper, n_max, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (upper - lower)
    mid = 0.5 * (upper + lower)
    x = mid[:, None] + half[:, None] * nodes[None, :]          # (J, q)
    w = half[:, None] * weights[None, :]
    psi = ho_wavefunctions(n_max, x)                           # (d, J, q)
    return np.einsum("mjk,njk,jk->jmn", psi, psi, w, optimize=True)


def bin_grams(lower, upper, n_max: int, order: int = 16, tol: float = 1e-10,
              max_order: int = 512) -> np.ndarray:
    """Real matrices G_j[m, n] = int_{lower_j}^{upper_j} psi_m psi_n dx.

    The Gauss-Legendre order starts at ``order`` and is doubled until doubling
    no longer changes any element by more than ``tol``.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    g = _gauss_legendre_grams(lower, upper, n_max, order)
    while order < max_order:
        g2 = _gauss_legendre_grams(lower, upper, n_max, 2 * order)
        done = np.max(np.abs(g2 - g)) <= tol
        g, order = g2, 2 * order
        if done:
            break
    return g


def bin_projector(qbin: QuadratureBin, n_max: int, order: int = 16) -> np.ndarray:
    """Fock-basis matrix of the projector onto p~(phi) in [center +- width/2]."""
    g = bin_grams([qbin.lower], [qbin.upper], n_max, order)[0]
    ph = _phase_vector(n_max + 1, qbin.phase)
    return ph[:, None] * g * ph.conj()[None, :]


def quadrature_pdf(rho: DensityMatrix, phi: float, grid) -> np.ndarray:
    """Probability density of p~(phi) on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    psi = ho_wavefunctions(rho.n_max, grid)                    # (d, G)
    amp = _phase_vector(rho.dim, phi)[:, None] * psi          # <m|p,phi>
    vals = np.einsum("ng,nm,mg->g", amp.conj(), rho.data, amp, optimize=True).real
    return np.clip(vals, 0.0, None)


# --------------------------------------------------------------------------
# Wigner function


def laguerre_terms(l_max: int, delta: int, x) -> np.ndarray:
    """h_l(x) = sqrt(l!/(l+delta)!) x^(delta/2) e^(-x/2) L_l^delta(x), l = 0..l_max.

    The weighted three-term recurrence keeps every term of order one, so the
    values stay finite for high Fock orders where the bare polynomial and the
    factorial ratio would overflow and underflow separately.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((l_max + 1,) + x.shape)
    with np.errstate(divide="ignore"):
        logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
    if delta == 0:
        out[0] = np.exp(-0.5 * x)
    else:
        out[0] = np.where(x > 0, np.exp(0.5 * delta * logx - 0.5 * x - 0.5 * gammaln(delta + 1.0)), 0.0)
    if l_max >= 1:
        out[1] = (1.0 + delta - x) * out[0] / math.sqrt(1.0 + delta)
    for k in range(1, l_max):
        out[k + 1] = ((2 * k + 1 + delta - x) * out[k]
                      - math.sqrt(k * (k + delta)) * out[k - 1]) / math.sqrt((k + 1) * (k + 1 + delta))
    return out


def wigner(rho: DensityMatrix, z_axis, p_axis) -> WignerGrid:
    """Wigner function of ``rho`` from its Laguerre expansion.

    Conjugate pairs rho[n, m], rho[m, n] are summed together as twice the real
    part, so the result is real by construction.
    """
    z_axis = np.asarray(z_axis, dtype=float)
    p_axis = np.asarray(p_axis, dtype=float)
    zz, pp = np.meshgrid(z_axis, p_axis, indexing="ij")
    alpha = 0.5 * (zz + 1j * pp)
    x = 4.0 * np.abs(alpha) ** 2
    lam = np.angle(alpha)
    d = rho.dim
    total = np.zeros_like(x)
    for delta in range(d):
        lmax = d - 1 - delta
        h = laguerre_terms(lmax, delta, x)
        sign = (-1.0) ** np.arange(lmax + 1)
        # rho[l, l+delta] pairs with its conjugate rho[l+delta, l]
        coeff = np.array([rho.data[l, l + delta] for l in range(lmax + 1)]) * sign
        if delta == 0:
            total += np.tensordot(coeff.real, h, axes=1)
        else:
            s = np.tensordot(coeff, h, axes=1)
            total += 2.0 * (s * np.exp(1j * lam * delta)).real
    return WignerGrid(z_axis, p_axis, total / (2.0 * math.pi))


# --------------------------------------------------------------------------
# construction and moments


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)


def fock_density(k: int, n_max: int, frame_omega: float | None = None) -> DensityMatrix:
    data = np.zeros((n_max + 1, n_max + 1), dtype=complex)
    data[k, k] = 1.0
    return DensityMatrix(data, frame_omega)


def thermal_density(n: float, n_max: int, frame_omega: float | None = None) -> DensityMatrix:
    """Bose-Einstein populations n^k / (n+1)^(k+1), cropped and renormalised."""
    k = np.arange(n_max + 1)
    pops = np.exp(k * math.log(n / (n + 1.0))) / (n + 1.0) if n > 0 else (k == 0).astype(float)
    return DensityMatrix(np.diag(pops / pops.sum()).astype(complex), frame_omega)


def to_dimensionless(state: GaussianState, omega: float, mass: float):
    """(mean, cov) of (z1, p1) normalised to the zero-point scales at ``omega``."""
    sz = math.sqrt(HBAR / (2.0 * mass * omega))
    sp = math.sqrt(HBAR * mass * omega / 2.0)
    scale = np.diag([1.0 / sz, 1.0 / sp])
    return scale @ state.mean, scale @ state.cov @ scale


def gaussian_density(mean, cov, n_max: int, pad: int | None = None,
                     frame_omega: float | None = None) -> DensityMatrix:
    """Displaced, rotated, squeezed thermal state with the given dimensionless moments.

    The unitaries are exponentiated in a padded space of size n_max + 1 + pad and
    the result cropped, so truncation artefacts of the generators stay far above
    n_max.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    if lam[0] <= 0:
        raise ParameterError("covariance must be positive definite")
    nu = math.sqrt(lam[0] * lam[1])
    if nu < 1.0 - 1e-9:
        raise ParameterError(f"covariance violates the uncertainty bound (symplectic eigenvalue {nu:.6g})")
    n_th = max(0.5 * (nu - 1.0), 0.0)
    s = 0.25 * math.log(lam[1] / lam[0])
    rot = math.atan2(-vec[1, 0], vec[0, 0])
    beta = 0.5 * (mean[0] + 1j * mean[1])

    if pad is None:
        pad = max(60, n_max)
    big = n_max + 1 + pad
    a = annihilation(big)
    ad = a.conj().T
    rho = np.diag(thermal_density(n_th, big - 1).data.diagonal()).astype(complex)
    if s != 0.0:
        sq = expm(0.5 * s * (a @ a - ad @ ad))
        rho = sq @ rho @ sq.conj().T
    if rot != 0.0:
        ph = np.exp(-1j * rot * np.arange(big))
        rho = ph[:, None] * rho * ph.conj()[None, :]
    if beta != 0:
        disp = expm(beta * ad - np.conj(beta) * a)
        rho = disp @ rho @ disp.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    tail = float(rho[n_max, n_max].real)
    leak = float(np.trace(rho).real - np.trace(rho[: n_max + 1, : n_max + 1]).real)
    if tail >= TAIL_LIMIT:
        raise TruncationError(
            f"n_max={n_max} too small: rho[n_max, n_max] = {tail:.3g} (population beyond n_max {leak:.3g})",
            tail_population=tail)
    crop = rho[: n_max + 1, : n_max + 1]
    return DensityMatrix(crop / np.trace(crop).real, frame_omega)


def gaussian_to_density(state: GaussianState, reference_frequency: float, n_max: int,
                        *, mass: float) -> DensityMatrix:
    """Embed an SI Gaussian state in the Fock basis of the ``reference_frequency`` oscillator."""
    mean, cov = to_dimensionless(state, reference_frequency, mass)
    return gaussian_density(mean, cov, n_max, frame_omega=reference_frequency)


def moments(rho: DensityMatrix):
    """Means and symmetrised covariance of (z1, p1)."""
    a = annihilation(rho.dim)
    r = rho.data
    ea = np.trace(r @ a)
    ea2 = np.trace(r @ a @ a)
    en = np.trace(r @ a.conj().T @ a).real
    mz, mp = 2.0 * ea.real, 2.0 * ea.imag
    zz = 2.0 * ea2.real + 2.0 * en + 1.0
    pp = -2.0 * ea2.real + 2.0 * en + 1.0
    zp = 2.0 * ea2.imag
    cov = np.array([[zz - mz * mz, zp - mz * mp], [zp - mz * mp, pp - mp * mp]])
    return mz, mp, cov


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    lam, vec = np.linalg.eigh(rho.data)
    root = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.conj().T
    inner = np.linalg.eigvalsh(root @ sigma.data @ root)
    return float(np.sum(np.sqrt(np.clip(inner, 0.0, None))) ** 2)
