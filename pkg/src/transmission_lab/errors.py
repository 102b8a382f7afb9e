"""Exception hierarchy shared by all modules."""


class TransmissionLabError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(TransmissionLabError, ValueError):
    pass


class OutOfDomainError(TransmissionLabError, IndexError):
    pass


class UnsupportedDimensionError(TransmissionLabError, NotImplementedError):
    pass


class NoRootError(TransmissionLabError, ValueError):
    pass


class ResolutionError(TransmissionLabError, ValueError):
    """A measurement region contains no grid nodes."""


class SingularSystemError(TransmissionLabError, RuntimeError):
    """A linear solve failed; for monotone systems this signals a bug."""


class NonConvergenceError(TransmissionLabError, RuntimeError):
    """The outer partition iteration hit its cap.

    Attributes
    ----------
    result : SolveResult
        Last iterate, with ``converged=False``.
    history : list of float
        Residual max-norm after each outer iteration.
    """

    def __init__(self, message, result=None, history=None):
        super().__init__(message)
        self.result = result
        self.history = list(history or [])
