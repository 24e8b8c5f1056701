"""Five-parameter Gaussian description of reconstructed states: MLE, G-test and MCMC."""

from .fit import GaussianFit, fit_gaussian, fit_gaussian_detailed, initial_guess
from .gtest import GTestReport, expected_counts, g_test, lump_phase
from .mcmc import (McmcDiagnostics, McmcSettings, Posterior, SigmaSummary, autocorrelation,
                   iact_geyer, rank_normalized_split_rhat, run_mcmc, sigma_summary, split_rhat)
from .model import PARAM_NAMES, GaussianModelParams, SampleStats, gaussian_loglik, loglik_derivatives

__all__ = [
    "GaussianFit", "fit_gaussian", "fit_gaussian_detailed", "initial_guess",
    "GTestReport", "expected_counts", "g_test", "lump_phase",
    "McmcDiagnostics", "McmcSettings", "Posterior", "SigmaSummary", "autocorrelation",
    "iact_geyer", "rank_normalized_split_rhat", "run_mcmc", "sigma_summary", "split_rhat",
    "PARAM_NAMES", "GaussianModelParams", "SampleStats", "gaussian_loglik", "loglik_derivatives",
]
