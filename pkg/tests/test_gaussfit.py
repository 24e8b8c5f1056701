from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from oracles import ar1_iact, g_statistic, split_rhat_textbook
from tofsense import synthlab as sl
from tofsense.errors import DegeneratePhaseError, InsufficientDataError, ParameterError
from tofsense.gaussfit import (GaussianModelParams, McmcSettings, SampleStats, expected_counts,
                               fit_gaussian, fit_gaussian_detailed, g_test, gaussian_loglik,
                               iact_geyer, loglik_derivatives, lump_phase,
                               rank_normalized_split_rhat, run_mcmc, sigma_summary, split_rhat)

FAST_MCMC = McmcSettings(min_effective=1000, block=200, seed=1)


def gaussian_samples(params, phases, shots, seed):
    return sl.sample_gaussian_quadratures(params.mean, params.covariance, phases, shots, seed)


class TestModel:
    def test_sigma_formula(self):
        p = GaussianModelParams(0.0, 0.0, 2.0, 1.0, 0.0)
        assert p.sigma_plus == pytest.approx(math.sqrt(3)) and p.sigma_minus == pytest.approx(1.0)

    @pytest.mark.parametrize("bad", [(0, 0, 1.0, 1.0, 0.0), (0, 0, 1.0, 0.6, 0.8), (0, 0, -1.0, 0, 0),
                                     (0, 0, math.nan, 0, 0)])
    def test_infeasible(self, bad):
        with pytest.raises(ParameterError):
            GaussianModelParams(*bad)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(-0.9, 0.9), st.floats(-3, 3), st.floats(-3, 3),
           st.floats(0, 2 * math.pi))
    def test_projection_matches_covariance(self, szz, spp, corr, mz, mp, phi):
        cov = np.array([[szz, corr * math.sqrt(szz * spp)], [corr * math.sqrt(szz * spp), spp]])
        p = GaussianModelParams.from_moments([mz, mp], cov)
        u = np.array([-math.sin(phi), math.cos(phi)])
        assert p.variance_at(phi) == pytest.approx(u @ cov @ u, rel=1e-9, abs=1e-12)
        assert p.mean_at(phi) == pytest.approx(u @ [mz, mp], abs=1e-12)
        np.testing.assert_allclose(p.covariance, cov, atol=1e-12)

    def test_iid_normal_limit(self, rng):
        p = rng.normal(0, 1.3, 200)
        phi = rng.uniform(0, math.pi, 200)
        val = gaussian_loglik(GaussianModelParams(0, 0, 1.69, 0, 0), (p, phi))
        assert val == pytest.approx(sps.norm.logpdf(p, scale=1.3).sum(), rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-math.pi, math.pi))
    def test_rotation_invariance(self, delta):
        gen = np.random.default_rng(0)
        params = GaussianModelParams(0.3, -0.2, 2.0, 0.7, -0.4)
        p = gen.normal(size=60)
        phi = gen.uniform(0, math.pi, 60)
        base = gaussian_loglik(params, (p, phi))
        assert gaussian_loglik(params.rotated(delta), (p, phi + delta)) == pytest.approx(base, rel=1e-10)

    def test_constraint_violation(self):
        with pytest.raises(ParameterError):
            gaussian_loglik(np.array([0, 0, 1.0, 2.0, 0.0]), (np.zeros(3), np.full(3, math.pi / 2)))

    def test_derivatives_match_finite_differences(self, rng):
        stats = SampleStats(rng.normal(size=300), rng.uniform(0, math.pi, 300).round(1))
        theta = np.array([0.1, -0.2, 1.5, 0.3, 0.2])
        val, grad, hess = loglik_derivatives(stats, theta)
        h = 1e-6
        for k in range(5):
            e = np.zeros(5)
            e[k] = h
            vp, gp, _ = loglik_derivatives(stats, theta + e)
            vm, gm, _ = loglik_derivatives(stats, theta - e)
            assert grad[k] == pytest.approx((vp - vm) / (2 * h), rel=1e-6, abs=1e-6)
            np.testing.assert_allclose(hess[:, k], (gp - gm) / (2 * h), rtol=1e-5, atol=1e-5)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            SampleStats(np.zeros(10), np.zeros(10)).require()


@pytest.fixture(scope="module")
def big_fit(squeezed_truth_params):
    phases = np.linspace(0, math.pi, 50, endpoint=False)
    return fit_gaussian_detailed(gaussian_samples(squeezed_truth_params, phases, 2000, seed=11))


@pytest.fixture(scope="module")
def thermal_run(gauss_phases):
    truth = GaussianModelParams(0, 0, 2.5, 0.0, 0.0)
    s = gaussian_samples(truth, gauss_phases, 3000, seed=21)
    return run_mcmc(s, fit_gaussian(s), FAST_MCMC)


class TestFit:
    def test_consistency(self, big_fit, squeezed_truth_params):
        z = (big_fit.params.as_array() - squeezed_truth_params.as_array()) / big_fit.stderr
        assert np.all(np.abs(z) < 3)

    def test_stationary_and_feasible(self, big_fit):
        assert big_fit.gradient_norm < 1e-6
        assert big_fit.params.A > big_fit.params.b_norm

    def test_ground_state(self, gauss_phases):
        vac = GaussianModelParams(0, 0, 1.0, 0.0, 0.0)
        fit = fit_gaussian_detailed(gaussian_samples(vac, gauss_phases, 1000, seed=2))
        p = fit.params
        se = math.sqrt(fit.covariance[2, 2])
        assert abs(p.sigma_plus - 1) < 3 * se + 3 * math.hypot(*fit.stderr[3:])
        assert abs(p.sigma_minus - 1) < 3 * se + 3 * math.hypot(*fit.stderr[3:])

    def test_squeezing_ratio(self, gauss_phases):
        r = 0.890
        truth = GaussianModelParams.from_moments([0, 0], np.diag([math.exp(-2 * r), math.exp(2 * r)]))
        p = fit_gaussian(gaussian_samples(truth, gauss_phases, 5000, seed=3))
        assert p.sigma_minus / p.sigma_plus == pytest.approx(math.exp(-2 * r), rel=0.03)

    def test_rotation_equivariance(self, squeezed_truth_params, gauss_phases):
        s = gaussian_samples(squeezed_truth_params, gauss_phases, 400, seed=4)
        a = fit_gaussian(s)
        p, phi = s.flat()
        b = fit_gaussian((p, phi + 0.7))
        np.testing.assert_allclose(a.rotated(0.7).as_array(), b.as_array(), atol=1e-6)
        assert b.sigma_minus == pytest.approx(a.sigma_minus, abs=1e-6)

    def test_pure_state_boundary(self, gauss_phases):
        # near-minimal variance data still yields a strictly feasible point
        truth = GaussianModelParams.from_moments([0, 0], np.diag([0.2, 5.0]))
        p = fit_gaussian(gaussian_samples(truth, gauss_phases[:3], 6, seed=5))
        assert p.A > p.b_norm

    def test_mu0_validation(self, gauss_phases):
        with pytest.raises(ParameterError):
            fit_gaussian(gaussian_samples(GaussianModelParams(0, 0, 1, 0, 0), gauss_phases, 5, 0), mu0=0.3)


class TestGTest:
    def test_expected_counts_sum(self):
        e = expected_counts(np.arange(-3, 4) * 0.5, 0.5, 100.0, 0.2, 1.1)
        assert e.sum() == pytest.approx(100.0)
        assert np.all(e > 0)

    def test_lumping_rules(self):
        e = expected_counts(np.arange(-20, 21) * 0.2, 0.2, 500.0, 0.0, 1.0)
        labels = lump_phase(e)
        assert np.all(np.diff(labels) >= 0) and labels[0] == 0
        merged = np.bincount(labels, weights=e)
        assert np.all(merged >= 10)
        np.testing.assert_array_equal(labels, lump_phase(e))

    def test_exact_counts_give_zero(self):
        params = GaussianModelParams(0, 0, 1.5, 0.2, 0.1)
        phases = np.linspace(0, math.pi, 8, endpoint=False)
        centers = np.arange(-30, 31) * 0.2
        counts = [expected_counts(centers, 0.2, 5000.0, params.mean_at(f), params.variance_at(f))
                  for f in phases]
        report = g_test(sl.Sinogram(phases, [centers] * 8, counts, 0.2), params)
        assert report.g_statistic == pytest.approx(0.0, abs=1e-9)
        assert report.upper_p_value == pytest.approx(1.0)

    def test_statistic_matches_oracle(self, squeezed_truth_params, gauss_phases):
        s = gaussian_samples(squeezed_truth_params, gauss_phases, 300, seed=6)
        sino = sl.bin_quadratures(s)
        params = fit_gaussian(s)
        rep = g_test(sino, params)
        g = 0.0
        for phi, c, f, lab in zip(sino.phases, sino.centers, sino.counts, rep.lumping):
            e = expected_counts(c, sino.delta, f.sum(), params.mean_at(phi), params.variance_at(phi))
            g += g_statistic(np.bincount(lab, weights=f), np.bincount(lab, weights=e))
        assert rep.g_raw == pytest.approx(g, rel=1e-12)
        assert rep.degrees_of_freedom == rep.n_merged_bins - len(gauss_phases) - 5
        ks = np.array([lab.max() + 1 for lab in rep.lumping])
        q = np.sum((ks - 1) * (1 + (ks + 1) / (6 * 300.0))) / np.sum(ks - 1)
        assert rep.williams_q == pytest.approx(q, rel=1e-12)
        assert rep.percentile == pytest.approx(sps.norm.isf(rep.upper_p_value))

    def test_centered_dof(self, squeezed_truth_params, gauss_phases):
        s = gaussian_samples(squeezed_truth_params, gauss_phases, 300, seed=6)
        sino = sl.bin_quadratures(s)
        params = fit_gaussian(s)
        a = g_test(sino, params, centered=False)
        b = g_test(sino, params, centered=True)
        assert a.degrees_of_freedom - b.degrees_of_freedom == len(gauss_phases) - 2

    def test_detects_wrong_model(self, squeezed_truth_params, gauss_phases):
        s = gaussian_samples(squeezed_truth_params, gauss_phases, 300, seed=6)
        rep = g_test(sl.bin_quadratures(s), GaussianModelParams(0.3, 0.1, 1.75, 0.0, 0.0))
        assert rep.upper_p_value < 1e-6

    def test_degenerate_phase(self):
        params = GaussianModelParams(0, 0, 1.0, 0, 0)
        sino = sl.Sinogram([0.0, 1.0], [[0.0], [0.0, 0.5]], [[5.0], [3.0, 2.0]], 0.5)
        with pytest.raises(DegeneratePhaseError):
            g_test(sino, params)

    def test_null_calibration_small(self, squeezed_truth_params, gauss_phases):
        pvals = []
        for seed in range(60):
            s = gaussian_samples(squeezed_truth_params, gauss_phases, 200, seed=100 + seed)
            pvals.append(g_test(sl.bin_quadratures(s), fit_gaussian(s)).upper_p_value)
        assert sps.kstest(pvals, "uniform").pvalue > 0.001


class TestDiagnostics:
    def test_split_rhat_matches_textbook(self, rng):
        chains = rng.normal(size=(4, 1000)) + np.array([[0.0], [0.1], [0.0], [-0.1]])
        assert split_rhat(chains) == pytest.approx(split_rhat_textbook(chains), rel=1e-12)

    def test_rhat_same_distribution(self, rng):
        chains = rng.normal(size=(2, 5000))
        assert rank_normalized_split_rhat(chains) < 1.01

    def test_rhat_detects_offset(self, rng):
        chains = rng.normal(size=(4, 1000))
        chains[0] += 1.0
        assert rank_normalized_split_rhat(chains) > 1.05

    def test_iact_iid(self, rng):
        assert iact_geyer(rng.normal(size=(4, 20000))) == pytest.approx(1.0, abs=0.1)

    @pytest.mark.parametrize("a", [0.5, 0.9])
    def test_iact_ar1(self, a):
        gen = np.random.default_rng(3)
        x = np.zeros((4, 50000))
        noise = gen.normal(size=x.shape)
        for k in range(1, x.shape[1]):
            x[:, k] = a * x[:, k - 1] + noise[:, k]
        assert iact_geyer(x) == pytest.approx(ar1_iact(a), rel=0.1)

    def test_degenerate_posterior(self):
        draws = np.tile([0.0, 0.0, 2.0, 1.0, 0.0], (50, 1))
        s = sigma_summary(draws)
        assert s.interval_plus[0] == s.interval_plus[1] == pytest.approx(math.sqrt(3))
        assert s.sigma_minus == pytest.approx(1.0)
        with pytest.raises(ParameterError):
            sigma_summary(np.empty((0, 5)))

    @pytest.mark.parametrize("kw", [dict(n_chains=1), dict(block=5), dict(acceptance=(0.5, 0.3))])
    def test_settings_validation(self, kw):
        with pytest.raises(ParameterError):
            McmcSettings(**kw)


class TestMcmc:
    def test_converges(self, thermal_run):
        post, diag = thermal_run
        assert diag.converged and diag.n_chains == 8
        assert max(diag.rhat.values()) < 1.01
        assert diag.n_effective >= 1000
        assert 0.15 < diag.acceptance < 0.45
        assert post.draws.shape[2] == 5

    def test_draws_feasible(self, thermal_run):
        th = thermal_run[0].flat
        assert np.all(th[:, 2] > np.hypot(th[:, 3], th[:, 4]))

    def test_thermal_mean_sigma(self, thermal_run):
        s = sigma_summary(thermal_run[0])
        assert s.sigma_mean == pytest.approx(math.sqrt(2 * 0.75 + 1), rel=0.02)
        assert s.interval_mean[0] < s.sigma_mean < s.interval_mean[1]

    def test_deterministic(self, gauss_phases):
        truth = GaussianModelParams(0, 0, 1.0, 0.0, 0.0)
        s = gaussian_samples(truth, gauss_phases, 100, seed=5)
        init = fit_gaussian(s)
        cfg = McmcSettings(min_effective=200, block=100, seed=9)
        a, _ = run_mcmc(s, init, cfg)
        b, _ = run_mcmc(s, init, cfg)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_rows_layout(self, thermal_run):
        post = thermal_run[0]
        row = next(post.rows())
        assert row[0] == 0 and len(row) == 7
        assert row[1] == int(post.iterations[0])

    def test_nonconvergence_flag(self, gauss_phases):
        truth = GaussianModelParams(0, 0, 1.0, 0.0, 0.0)
        s = gaussian_samples(truth, gauss_phases, 100, seed=5)
        _, diag = run_mcmc(s, fit_gaussian(s), McmcSettings(min_effective=10**6, block=50,
                                                            max_burn_blocks=2, max_samples=200))
        assert not diag.converged
        assert diag.notes
