"""Exception types raised by the solver, the oracle and the CLI."""


class MultiHedinError(Exception):
    """Base class for all package errors."""


class InvalidLatticeError(MultiHedinError, ValueError):
    pass


class UnsupportedLatticeError(MultiHedinError, ValueError):
    pass


class DimensionMismatchError(MultiHedinError, ValueError):
    pass


class ParityMismatchError(MultiHedinError, ValueError):
    pass


class SingularPropagatorError(MultiHedinError, ArithmeticError):
    """A propagator inverse hit an exact pole (bosonic nu_0 at an eigenvalue)."""


class DivergingPropagatorError(MultiHedinError, ArithmeticError):
    def __init__(self, message, freq_index=None):
        super().__init__(message)
        self.freq_index = freq_index


class ScreeningInstabilityError(MultiHedinError, ArithmeticError):
    """``I - v P_tot`` is singular at some bosonic frequency."""

    def __init__(self, message, freq_index=None, iteration=None):
        super().__init__(message)
        self.freq_index = freq_index
        self.iteration = iteration


class UnreachableFillingError(MultiHedinError, ValueError):
    pass


class UnsupportedSizeError(MultiHedinError, ValueError):
    pass


class DimensionCapError(MultiHedinError, ValueError):
    pass


class ConfigError(MultiHedinError, ValueError):
    pass
