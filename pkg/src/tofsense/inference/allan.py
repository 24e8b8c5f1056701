"""Allan deviation of a uniformly sampled force series."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientDataError, ParameterError

__all__ = ["AllanResult", "allan_deviation", "default_taus", "white_noise_adev"]


@dataclass
class AllanResult:
    taus: np.ndarray
    adev: np.ndarray
    n_windows: np.ndarray
    overlapping: bool = False
    notes: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.taus.tolist(), self.adev.tolist()))

    def to_dict(self) -> dict:
        return {"tau_s": self.taus.tolist(), "adev_N": self.adev.tolist(),
                "n_windows": self.n_windows.tolist(), "overlapping": self.overlapping,
                "notes": list(self.notes)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau_s", "adev_N"])
        for t, a in self.rows():
            w.writerow([repr(t), repr(a)])
        return buf.getvalue()


def white_noise_adev(sigma: float, f_s: float, taus) -> np.ndarray:
    """Allan deviation of white noise with per-sample std ``sigma``: sigma / sqrt(f_s tau)."""
    return sigma / np.sqrt(f_s * np.asarray(taus, dtype=float))


def default_taus(n: int, f_s: float, per_decade: int = 10) -> np.ndarray:
    """Log-spaced averaging times from 1/f_s up to the longest with two windows."""
    m_max = n // 2
    if m_max < 1:
        raise InsufficientDataError("series too short for any averaging time")
    m = np.unique(np.round(np.logspace(0, math.log10(m_max), max(2, int(per_decade * math.log10(max(m_max, 10))) + 1))))
    return m.astype(int) / f_s


def allan_deviation(y, f_s: float, taus=None, overlapping: bool = False) -> AllanResult:
    """Two-sample deviation of ``y`` at averaging times ``taus`` [s].

    Each tau must be an integer multiple m of the sample interval with at
    least two full windows of m samples; other values are skipped and noted.
    """
    y = np.asarray(y, dtype=float)
    if not f_s > 0:
        raise ParameterError("sampling frequency must be > 0")
    if y.ndim != 1 or len(y) < 2:
        raise InsufficientDataError("need a 1-D series of >= 2 samples")
    if taus is None:
        taus = default_taus(len(y), f_s)
    csum = np.concatenate([[0.0], np.cumsum(y - y.mean())])
    out_t, out_a, out_n, notes = [], [], [], []
    for tau in np.asarray(taus, dtype=float):
        m_float = tau * f_s
        m = int(round(m_float))
        if m < 1 or abs(m_float - m) > 1e-9 * max(1.0, m_float):
            notes.append(f"tau={tau:g} s skipped: not an integer multiple of 1/f_s")
            continue
        if 2 * m > len(y):
            notes.append(f"tau={tau:g} s skipped: fewer than two windows")
            continue
        if overlapping:
            avg = (csum[m:] - csum[:-m]) / m
            diff = avg[m:] - avg[:-m]
        else:
            k = len(y) // m
            avg = (csum[m:k * m + 1:m] - csum[0:k * m:m]) / m
            diff = np.diff(avg)
        out_t.append(m / f_s)
        out_a.append(math.sqrt(0.5 * float(np.mean(diff**2))))
        out_n.append(len(diff))
    return AllanResult(np.asarray(out_t), np.asarray(out_a), np.asarray(out_n, dtype=int),
                       overlapping, notes)
