"""Exception hierarchy shared by all modules."""


class GatedSpectraError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(GatedSpectraError, ValueError):
    """Invalid hyperparameters or arguments."""


class ShapeError(GatedSpectraError, ValueError):
    """Array or state dimensions do not match the network."""


class DivergenceError(GatedSpectraError, ArithmeticError):
    """A trajectory produced NaN/inf or left its admissible range."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(GatedSpectraError, RuntimeError):
    """An iterative scheme did not converge.

    ``iterates`` holds the last values seen, for diagnostics.
    """

    def __init__(self, message, iterates=()):
        super().__init__(message)
        self.iterates = tuple(iterates)


class PoleProximityError(GatedSpectraError, ValueError):
    """The evaluation point sits on (or within 1e-12 of) a sampled pole."""


class UnsupportedRegimeError(GatedSpectraError, ValueError):
    """The requested quantity has no tractable form in this regime."""


class EmptySpectrumError(GatedSpectraError, RuntimeError):
    """No sign change of the boundary function was found on the grid."""


class NoMarginalStabilityError(GatedSpectraError, ValueError):
    """The pinching constant has no positive solution."""


class FitError(GatedSpectraError, RuntimeError):
    """A curve fit was attempted on degenerate data."""


class SolverError(GatedSpectraError, RuntimeError):
    """The dense eigensolver failed."""


class NotApplicableError(GatedSpectraError, ValueError):
    """The query makes no sense at this parameter point."""


class InvariantError(GatedSpectraError, ValueError):
    """Input data violate a structural invariant (e.g. |C(k)| > C(0))."""


class ComparisonError(GatedSpectraError, ValueError):
    """A cloud cannot be compared against the given prediction."""
