"""G-test of a fitted Gaussian ansatz against a binned sinogram.

Expected counts come from the model's normal law at each phase, with the
outermost bins of every histogram extended to +-infinity so that each phase
carries its full count. Bins whose expectation is below ``min_expected`` are
merged with their inward neighbours, working from both tails toward the modal
bin, so the lumping depends only on the model and the bin grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats as sps

from ..errors import DegeneratePhaseError

__all__ = ["GTestReport", "expected_counts", "lump_phase", "g_test"]


@dataclass
class GTestReport:
    g_statistic: float
    g_raw: float
    williams_q: float
    degrees_of_freedom: int
    upper_p_value: float
    percentile: float
    n_merged_bins: int
    n_phases: int
    lumping: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "g_statistic": self.g_statistic,
            "g_raw": self.g_raw,
            "williams_q": self.williams_q,
            "degrees_of_freedom": self.degrees_of_freedom,
            "upper_p_value": self.upper_p_value,
            "percentile_sigma": self.percentile,
            "n_merged_bins": self.n_merged_bins,
            "n_phases": self.n_phases,
            "lumping": [m.tolist() for m in self.lumping],
        }


def expected_counts(centers, delta: float, total: float, mean: float, var: float) -> np.ndarray:
    """Model counts in bins [c - delta/2, c + delta/2], tails folded into the end bins."""
    edges = np.concatenate([np.asarray(centers, float) - 0.5 * delta,
                            [float(centers[-1]) + 0.5 * delta]])
    cdf = special.ndtr((edges - mean) / math.sqrt(var))
    cdf[0], cdf[-1] = 0.0, 1.0
    return total * np.diff(cdf)


def _sweep(expected, order, min_expected):
    """Greedy grouping along ``order``; returns (groups, leftover indices)."""
    groups, cur, acc = [], [], 0.0
    for k in order:
        cur.append(k)
        acc += expected[k]
        if acc >= min_expected:
            groups.append(cur)
            cur, acc = [], 0.0
    return groups, cur


def lump_phase(expected, min_expected: float = 10.0) -> np.ndarray:
    """Map each bin of one phase to a merged-bin label (0, 1, ... left to right)."""
    e = np.asarray(expected, dtype=float)
    k = int(np.argmax(e))
    left, left_rest = _sweep(e, range(0, k), min_expected)
    right, right_rest = _sweep(e, range(len(e) - 1, k, -1), min_expected)
    centre = left_rest + [k] + right_rest
    groups = left + [sorted(centre)] + [sorted(g) for g in reversed(right)]
    # A centre group that is still short joins the lighter neighbour.
    ci = len(left)
    while len(groups) > 1 and sum(e[j] for j in groups[ci]) < min_expected:
        nbrs = [i for i in (ci - 1, ci + 1) if 0 <= i < len(groups)]
        tgt = min(nbrs, key=lambda i: sum(e[j] for j in groups[i]))
        groups[tgt] = sorted(groups[tgt] + groups[ci])
        del groups[ci]
        ci = tgt if tgt < ci else ci
    labels = np.empty(len(e), dtype=np.int64)
    for g, idx in enumerate(groups):
        labels[idx] = g
    return labels


def g_test(sinogram, params, min_expected: float = 10.0, n_params: int = 5,
           centered: bool | None = None) -> GTestReport:
    """Lumped G-test with Williams' correction.

    dof = (merged bins) - (phases) - n_params, one constraint per phase for the
    fixed per-phase totals. For per-phase centred data (``centered``, read from
    ``sinogram.meta`` by default) every phase also loses its mean, which makes
    the two mean parameters redundant: dof = bins - 2 phases - (n_params - 2). Williams' divisor for one multinomial table with k
    cells and N counts is q = 1 + (k + 1) / (6 N); across phases we use the
    average of the per-phase q weighted by each table's k - 1 degrees of freedom.
    """
    g_raw = 0.0
    lumping = []
    k_total = 0
    q_num = q_den = 0.0
    for i, (phi, c, f) in enumerate(zip(sinogram.phases, sinogram.centers, sinogram.counts)):
        n_i = float(f.sum())
        e = expected_counts(c, sinogram.delta, n_i, float(params.mean_at(phi)),
                            float(params.variance_at(phi)))
        labels = lump_phase(e, min_expected)
        k = int(labels.max()) + 1
        if k < 2:
            raise DegeneratePhaseError(
                f"phase {i} (phi={phi:.6g}) collapses to a single merged bin", offending=[i])
        obs = np.bincount(labels, weights=f, minlength=k)
        exp = np.bincount(labels, weights=e, minlength=k)
        pos = obs > 0
        g_raw += 2.0 * float(np.sum(obs[pos] * np.log(obs[pos] / exp[pos])))
        lumping.append(labels)
        k_total += k
        q_num += (k - 1) * (1.0 + (k + 1) / (6.0 * n_i))
        q_den += k - 1
    n_ph = len(sinogram.phases)
    if centered is None:
        centered = bool(getattr(sinogram, "meta", {}).get("centered", False))
    dof = k_total - n_ph - n_params
    if centered:
        dof -= n_ph - 2
    if dof < 1:
        raise DegeneratePhaseError(f"no degrees of freedom left ({k_total} merged bins, "
                                   f"{n_ph} phases, {n_params} parameters)")
    q = q_num / q_den
    g = max(g_raw, 0.0) / q
    p = float(sps.chi2.sf(g, dof))
    return GTestReport(g, g_raw, q, dof, p, float(sps.norm.isf(p)), k_total, n_ph, lumping)
