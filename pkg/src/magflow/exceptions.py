"""Exception hierarchy shared by all modules."""


class MagflowError(Exception):
    """Base class for every error raised by the package."""


class DomainError(MagflowError, ValueError):
    """A point lies outside the chart domain of a surface backend."""


class DegenerateInputError(MagflowError, ValueError):
    """Input that has no well-defined answer, e.g. rotating the zero vector."""


class BandwidthError(MagflowError, ValueError):
    """Quadrature node count too small for the declared integrand degree."""


class ConfigurationError(MagflowError, ValueError):
    """Invalid or inconsistent configuration (integrality, missing reference loop, ...)."""


class ContractError(MagflowError, ValueError):
    """An operation precondition is violated (open curve where a closed one is needed, ...)."""


class RegimeError(MagflowError, ValueError):
    """Parameters outside the regime where an analytic oracle applies."""


class StiffnessError(MagflowError, RuntimeError):
    """Integrator step size underflow."""


class NoConvergenceError(MagflowError, RuntimeError):
    """Newton iteration failed to converge.

    Attributes
    ----------
    residuals : list of float
        Residual norm after each iteration.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class DegenerateOrbitError(NoConvergenceError):
    """Shooting Jacobian singular, typically a parabolic (degenerate) orbit."""


class ContinuationError(MagflowError, RuntimeError):
    """Continuation halted at a fold or degeneracy; carries the partial branch."""

    def __init__(self, message, branch=None):
        super().__init__(message)
        self.branch = branch
