from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from tofsense import tomomle as tm
from tofsense.errors import ParameterError, SupportError
from tofsense.fockstate import (DensityMatrix, bin_projector, QuadratureBin, fock_density, gaussian_density,
                                thermal_density)
from tofsense.synthlab import Sinogram


def expected_sinogram(rho: DensityMatrix, phases, delta=0.25, extent=14.0, total=1e6):
    """Noise-free sinogram: counts equal total/I times the bin probabilities."""
    k = np.arange(-int(extent / delta), int(extent / delta) + 1)
    centers = k * delta
    probe = Sinogram(phases, [centers] * len(phases), [np.ones_like(centers)] * len(phases), delta)
    probs = tm.ProjectorCache(probe, rho.n_max).probabilities(rho.data)
    counts = [total / len(phases) * p for p in probs]
    return Sinogram(phases, [centers] * len(phases), counts, delta)


PHASES = np.linspace(0, math.pi, 30, endpoint=False)


@pytest.fixture(scope="module")
def thermal_truth():
    return thermal_density(1.0, 23)


@pytest.fixture(scope="module")
def thermal_sino(thermal_truth):
    return expected_sinogram(thermal_truth, PHASES)


class TestROperator:
    def test_identity_at_truth(self, thermal_truth, thermal_sino):
        r = tm.r_bin(thermal_truth, thermal_sino)
        assert np.linalg.norm(r - np.eye(24), 2) < 1e-8

    def test_identity_on_sampled_counts(self, thermal_roundtrip):
        rt = thermal_roundtrip
        rho = rt.result.rho
        r = tm.r_bin(rho, rt.sinogram)
        min_count = min(f[f > 0].min() for f in rt.sinogram.counts)
        assert abs(np.trace(r @ rho.data).real - 1.0) < 1e-9
        assert np.linalg.norm(r - np.eye(rho.dim), 2) < 3 / math.sqrt(min_count)

    def test_single_bin_proportional_to_projector(self, thermal_truth):
        sino = Sinogram([0.3], [[0.8]], [[7.0]], 0.4)
        r = tm.r_bin(thermal_truth, sino)
        pi = bin_projector(QuadratureBin(0.8, 0.4, 0.3), 23)
        p = np.trace(pi @ thermal_truth.data).real
        np.testing.assert_allclose(r, pi / p, atol=1e-10)

    def test_parity_symmetry(self, thermal_truth):
        centers = np.arange(-5, 6) * 0.3
        counts = np.exp(-centers**2)
        sino = Sinogram([0.0, 1.0], [centers] * 2, [counts] * 2, 0.3)
        r = tm.r_bin(thermal_truth, sino)
        parity = np.diag((-1.0) ** np.arange(24))
        np.testing.assert_allclose(r @ parity, parity @ r, atol=1e-10)

    def test_hermitian(self, thermal_roundtrip):
        r = tm.r_bin(thermal_roundtrip.result.rho, thermal_roundtrip.sinogram)
        np.testing.assert_allclose(r, r.conj().T, atol=1e-14)


class TestIteration:
    def test_small_step_limit(self, thermal_sino):
        rho = DensityMatrix(np.eye(24) / 24)
        r = tm.r_bin(rho, thermal_sino)
        deriv = r @ rho.data + rho.data @ r - 2 * np.trace(r @ rho.data).real * rho.data
        eps = 1e-7
        fd = (tm._step(rho.data, r, eps) - rho.data) / eps
        np.testing.assert_allclose(fd, deriv, atol=1e-5)

    def test_fixed_point(self, thermal_truth, thermal_sino):
        new = tm.mle_step(thermal_truth, thermal_sino, tm.MleSettings(epsilon=1.0))
        assert np.max(np.abs(new.data - thermal_truth.data)) < 1e-10

    def test_step_moves_towards_vacuum(self):
        vac = fock_density(0, 10)
        sino = expected_sinogram(vac, np.linspace(0, math.pi, 12, endpoint=False))
        start = DensityMatrix(np.eye(11) / 11)
        new = tm.mle_step(start, sino, tm.MleSettings(n_max=10))
        assert new.data[0, 0].real > 1 / 11
        new.check()

    def test_recovers_truth_from_expected_counts(self, thermal_truth, thermal_sino):
        res = tm.reconstruct(thermal_sino, tm.MleSettings.thermal(threshold_distance=1e-6,
                                                                  threshold_loglik=1e-12))
        assert res.converged
        assert np.max(np.abs(res.rho.data - thermal_truth.data)) < 1e-3

    def test_monotone_likelihood(self, squeezed_roundtrip):
        trace = np.asarray(squeezed_roundtrip.result.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-12 * np.abs(trace[1:]))

    def test_result_is_a_state(self, thermal_roundtrip, squeezed_roundtrip):
        for rt in (thermal_roundtrip, squeezed_roundtrip):
            res = rt.result
            res.rho.check(atol=1e-9)
            assert res.converged and res.truncation_ok and res.identifiable
            assert res.report()["n_max"] == res.rho.n_max

    def test_non_identifiable_flagged(self, thermal_truth, caplog):
        sino = expected_sinogram(thermal_truth, [0.0, 0.0])
        with caplog.at_level(logging.WARNING, logger="tofsense.tomomle"):
            res = tm.reconstruct(sino, tm.MleSettings(n_max=5, max_iterations=20))
        assert not res.identifiable
        assert "not identifiable" in caplog.text

    def test_initial_shape_mismatch(self, thermal_sino):
        with pytest.raises(ParameterError):
            tm.reconstruct(thermal_sino, tm.MleSettings(n_max=5), initial=fock_density(0, 7))

    def test_cache_reuse_matches_fresh(self, thermal_truth, thermal_sino):
        cache = tm.cache_for(thermal_sino, 23)
        other = Sinogram(thermal_sino.phases, thermal_sino.centers, [2 * c for c in thermal_sino.counts],
                         thermal_sino.delta)
        reused = tm.cache_for(other, 23, cache)
        assert reused.grams_flat is cache.grams_flat
        fresh = tm.ProjectorCache(other, 23)
        rho = thermal_density(0.5, 23).data
        assert reused.loglik(reused.probabilities(rho)) == pytest.approx(fresh.loglik(fresh.probabilities(rho)))


class TestLikelihood:
    def test_truth_maximises_expected_likelihood(self, thermal_truth, thermal_sino):
        best = tm.log_likelihood(thermal_truth, thermal_sino)
        for other in (thermal_density(0.8, 23), thermal_density(1.3, 23),
                      gaussian_density([0.1, 0.0], 3 * np.eye(2), 23)):
            assert tm.log_likelihood(other, thermal_sino) < best

    def test_single_covering_bin_is_zero(self):
        sino = Sinogram([0.0, 1.0], [[0.0], [0.0]], [[5.0], [5.0]], 60.0)
        assert tm.log_likelihood(thermal_density(1.0, 20), sino) == pytest.approx(0.0, abs=1e-9)

    def test_matches_point_likelihood_for_narrow_bins(self, rng):
        rho = gaussian_density([0.0, 0.0], np.diag([0.7, 1.9]), 30)
        phi = np.repeat([0.0, 0.8, 2.0], 50)
        p = rng.normal(0.0, 1.0, phi.size)
        delta = 1e-4
        k = np.rint(p / delta)
        p = k * delta
        sino = Sinogram([0.0, 0.8, 2.0], [p[phi == f] for f in (0.0, 0.8, 2.0)],
                        [np.ones(50)] * 3, delta)
        binned = tm.log_likelihood(rho, sino)
        assert binned == pytest.approx(tm.point_log_likelihood(rho, p, phi) + p.size * math.log(delta),
                                       abs=1e-5)

    def test_support_error_names_bin(self):
        sino = Sinogram([0.0, 0.5], [[0.0], [60.0]], [[3.0], [1.0]], 0.5)
        with pytest.raises(SupportError) as info:
            tm.r_bin(fock_density(0, 4), sino)
        assert info.value.phase_index == 1 and info.value.bin_index == 120

    def test_minus_infinity_sentinel(self, caplog):
        sino = Sinogram([0.0, 0.5], [[0.0], [60.0]], [[3.0], [1.0]], 0.5)
        with caplog.at_level(logging.WARNING, logger="tofsense.tomomle"):
            assert tm.log_likelihood(fock_density(0, 4), sino) == -math.inf
        assert "bin centre index 120" in caplog.text


class TestSettings:
    def test_profiles(self):
        t, s = tm.MleSettings.profile("thermal"), tm.MleSettings.profile("squeezed")
        assert (t.n_max, t.threshold_distance, t.threshold_loglik) == (23, 3e-4, 4e-5)
        assert (s.n_max, s.threshold_distance, s.threshold_loglik) == (70, 9e-5, 8e-6)
        assert tm.MleSettings.profile("custom", n_max=5).n_max == 5

    @pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(epsilon=1.5), dict(n_max=0),
                                    dict(threshold_distance=0.0), dict(max_iterations=0)])
    def test_validation(self, kw):
        with pytest.raises(ParameterError):
            tm.MleSettings(**kw)

    def test_unknown_profile(self):
        with pytest.raises(ParameterError):
            tm.MleSettings.profile("coherent")

    @pytest.mark.parametrize("phases,count", [([0.0, math.pi], 1), ([0.0, 0.1, 0.2], 3),
                                              ([0.0, 0.0, 1e-12], 1), ([], 0)])
    def test_distinct_phase_count(self, phases, count):
        assert tm.distinct_phase_count(phases) == count
