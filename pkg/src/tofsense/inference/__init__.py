"""Sensitivity from Fisher information, classical fits and Allan deviation."""

from .allan import AllanResult, allan_deviation, default_taus, white_noise_adev
from .fisher import (BootstrapSettings, FisherResult, bootstrap_fisher, fisher_sensitivity,
                     gaussian_translation_fisher, translation_fisher)
from .fits import (FitReport, estimate_heating_rate, fit_heating_rate, fit_oscillation_offset,
                   fit_position_distribution, fit_squeezing_floor, fit_susceptibility,
                   normalized_sigma_z, oscillation_offset_theory, squeezing_floor_model,
                   tilt_from_offset)

__all__ = [
    "AllanResult", "allan_deviation", "default_taus", "white_noise_adev",
    "BootstrapSettings", "FisherResult", "bootstrap_fisher", "fisher_sensitivity",
    "gaussian_translation_fisher", "translation_fisher",
    "FitReport", "estimate_heating_rate", "fit_heating_rate", "fit_oscillation_offset",
    "fit_position_distribution", "fit_squeezing_floor", "fit_susceptibility",
    "normalized_sigma_z", "oscillation_offset_theory", "squeezing_floor_model",
    "tilt_from_offset",
]
