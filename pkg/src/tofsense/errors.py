"""Exception types raised across the toolkit."""


class ParameterError(ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class TruncationError(ValueError):
    """The Fock-space cutoff is too small for the requested state."""

    def __init__(self, message, tail_population=None):
        super().__init__(message)
        self.tail_population = tail_population


class SupportError(ValueError):
    """A populated histogram bin has (numerically) zero predicted probability."""

    def __init__(self, message, phase_index=None, bin_index=None):
        super().__init__(message)
        self.phase_index = phase_index
        self.bin_index = bin_index


class InsufficientDataError(ValueError):
    """Not enough shots, phases or samples for the requested estimator."""

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = list(offending or [])


class FitError(RuntimeError):
    """A nonlinear fit or constrained maximization did not converge."""

    def __init__(self, message, last_iterate=None, gradient_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.gradient_norm = gradient_norm


class FrameMismatchError(ValueError):
    """A density matrix was reconstructed in a different oscillator frame."""


class DegeneratePhaseError(InsufficientDataError):
    """A phase histogram collapsed to fewer than two bins after lumping."""
