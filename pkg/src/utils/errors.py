"""Exceptions raised by the homogenization engine

Every error derives from `HomogError` so the command line can report any of them
and exit cleanly.
"""


class HomogError(Exception):
    """Base class for all engine errors"""


class ZeroVector(HomogError):
    """An integer direction vector was zero"""


class EtaNotRepresentable(HomogError):
    """No short integer vector approximates the requested tangent direction"""


class UnknownFamily(HomogError):
    """A coefficient family name is not one of the built-ins"""


class EllipticityViolation(HomogError):
    """A sampled coefficient left the declared ellipticity bounds"""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class SolverDiverged(HomogError):
    """An iterative linear solve hit its iteration cap"""


class IllConditioned(HomogError):
    """A linear solve stagnated above the requested residual"""


class NonConvergent(HomogError):
    """The penalization extrapolation spread exceeded its tolerance"""


class CompatibilityViolation(HomogError):
    """A slice right-hand side is not orthogonal to the invariant measure"""


class SmallDivisor(HomogError):
    """A retained Fourier mode is (numerically) parallel to the direction"""


class NullspaceDegenerate(HomogError):
    """The adjoint null vector is not unique, not positive or not stationary"""


class SequenceNotSettled(HomogError):
    """Successive terms of an approach sequence stopped getting closer"""


class NoMargin(HomogError):
    """Traveling sub/supersolutions could not be certified at this scale"""


class InvalidAlpha(HomogError):
    """The forcing constant must be nonzero"""


class GradientDegenerate(HomogError):
    """The front gradient collapsed so the normal is undefined"""


class CFLViolation(HomogError):
    """A time step exceeded the explicit stability bound"""


class NotConverged(HomogError):
    """An obstacle solver hit its sweep cap"""


class BracketsDisagree(HomogError):
    """Sub- and supersolution brackets for the critical value are far apart"""


class ConfigError(HomogError):
    """A configuration key is missing or invalid"""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
