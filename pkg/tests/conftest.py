"""Shared fixtures. Expensive reconstructions are built once per session."""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tofsense import fockstate as fs  # noqa: E402
from tofsense import synthlab as sl  # noqa: E402
from tofsense.phasespace import ProtocolConfig, thermal_state  # noqa: E402
from tofsense.tomomle import MleSettings, reconstruct  # noqa: E402

ROUND_TRIP_SEED = 3


@pytest.fixture(scope="session")
def cfg():
    return ProtocolConfig()


@pytest.fixture(scope="session")
def clean_cfg():
    """Paper parameters without gas heating or readout noise."""
    return ProtocolConfig(gamma_bg=0.0, noise_floor=0.0)


class RoundTrip:
    def __init__(self, cfg, with_prep, profile, seed, shots=600, phases=300):
        self.cfg = cfg
        self.with_prep = with_prep
        t_sp = sl.tomography_t_sp(cfg, phases, with_prep=with_prep)
        self.shots = sl.scan_shots(cfg, t_sp, shots, seed, with_prep)
        self.samples = sl.quadratures_from_shots(self.shots, cfg, with_prep)
        self.sinogram = sl.bin_quadratures(self.samples)
        self.settings = MleSettings.profile(profile)
        self.result = reconstruct(self.sinogram, self.settings)
        omega = cfg.sp_frequency(with_prep)
        self.truth = fs.gaussian_to_density(thermal_state(cfg, cfg.omega0), omega, self.settings.n_max,
                                            mass=cfg.mass)
        # the data are centred per phase, so compare against the centred truth
        _, _, cov = fs.moments(self.truth)
        self.truth = fs.gaussian_density([0.0, 0.0], cov, self.settings.n_max, frame_omega=omega)
        self.truth_cov = cov


@pytest.fixture(scope="session")
def thermal_roundtrip(clean_cfg):
    return RoundTrip(clean_cfg, False, "thermal", ROUND_TRIP_SEED)


@pytest.fixture(scope="session")
def squeezed_roundtrip(clean_cfg):
    return RoundTrip(clean_cfg, True, "squeezed", ROUND_TRIP_SEED)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def squeezed_truth_params():
    """Ansatz parameters of a moderately squeezed, rotated, displaced state."""
    from tofsense.gaussfit import GaussianModelParams
    return GaussianModelParams.from_moments([0.3, 0.1], [[0.5, 0.2], [0.2, 3.0]])


@pytest.fixture(scope="session")
def gauss_phases():
    return np.linspace(0.0, math.pi, 20, endpoint=False)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
