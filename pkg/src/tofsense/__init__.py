"""Time-of-flight force sensing toolkit for a levitated nanoparticle.

Gaussian phase-space propagation of the squeeze/release protocol, synthetic
measurement records, maximum-likelihood state tomography, Gaussian-ansatz
fitting with MCMC uncertainties, and Fisher-information sensitivity analysis.
"""

__version__ = "0.1.0"
