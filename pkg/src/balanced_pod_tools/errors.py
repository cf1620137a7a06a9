"""Exception types raised by balanced-pod-tools."""


class BalancedPodError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(BalancedPodError, ValueError):
    """Inputs are malformed: wrong dimensions, non-finite entries, bad config."""


class ArtifactError(BalancedPodError):
    """An upstream pipeline artifact is missing or stale."""

    def __init__(self, message: str, stage: str = None):
        super().__init__(message)
        self.stage = stage


class NumericalError(BalancedPodError, ArithmeticError):
    """A numerical procedure failed or a monitored invariant was violated."""


class ConvergenceError(NumericalError):
    """An iteration cap was reached before the tolerance was met."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class StabilityError(NumericalError):
    """An operator required to be stable is not."""


class HyperbolicityError(NumericalError):
    """An eigenvalue lies on (or too close to) the imaginary axis."""


class RankError(NumericalError):
    """A requested order exceeds the numerical rank of the data."""

    def __init__(self, message: str, attainable: int = None):
        super().__init__(message)
        self.attainable = attainable


class SingularPairingError(NumericalError):
    """A pairing or factor that must be invertible is singular."""


class ProjectorLeakageError(NumericalError):
    """A run restricted to the stable subspace grew without bound."""


class StabilizabilityError(NumericalError):
    """An unstable direction cannot be reached through the inputs."""

    def __init__(self, message: str, eigenvalue: complex = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class DetectabilityError(NumericalError):
    """An unstable direction is invisible to the sensors."""

    def __init__(self, message: str, eigenvalue: complex = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class LineSearchError(ConvergenceError):
    """Damped Newton could not reduce the residual."""


class PlantBlowUpError(NumericalError):
    """A closed-loop simulation diverged."""
