"""Exception hierarchy shared by the engines and the command line."""


class OrbitHolographyError(Exception):
    """Base class for every error raised by this package"""


class DomainError(OrbitHolographyError, ValueError):
    """Input outside the domain of an operation"""


class SingularityError(DomainError):
    """Potential or gradient requested at the origin"""


class DegenerateParameterError(DomainError):
    """Parameterization breaks down (eps = 1 on the quartic route)"""


class NumericalError(OrbitHolographyError, RuntimeError):
    """A numerical procedure failed to deliver a trustworthy result"""


class ResolventDegeneracyError(NumericalError):
    """Closed-form quartic resolvent divides by zero"""


class ConvergenceError(NumericalError):
    """Newton iteration did not converge"""

    def __init__(self, message: str, best_residual: float = float("nan"), best=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best = best


class IntegrationError(NumericalError):
    """Adaptive integrator could not meet its tolerance"""


class HardCollisionError(IntegrationError):
    """Trajectory ran into the Coulomb singularity"""


class BoundElectronError(NumericalError):
    """Electron ends with negative energy and never reaches the detector"""


class DiscardedSaddleError(DomainError):
    """Amplitude requested for a saddle removed by a Stokes transition"""


class MaslovContinuityError(NumericalError):
    """Square-root branch of a stability prefactor is undefined"""
