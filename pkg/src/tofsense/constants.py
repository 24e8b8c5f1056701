"""Physical constants (CODATA 2018 exact values) and default protocol numbers."""

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K

# Nominal experiment parameters used for defaults and reproduction targets.
MASS = 3.2e-17  # kg
OMEGA0 = 2.0 * 3.141592653589793 * 221e3  # rad / s
OMEGA1 = 2.0 * 3.141592653589793 * 37.3e3  # rad / s
G_TOKYO = 9.798  # m / s^2
OCCUPATION = 0.75
GAMMA_BG = 16e-3  # K / s
NOISE_FLOOR = 9e-12  # m
T_TOF = 100e-6  # s
