"""Exception hierarchy shared by the csim modules."""


class CsimError(Exception):
    """Base class for every error raised by csim."""


class InvalidStateError(CsimError, ValueError):
    """Point outside the orthant, wrong dimension, or off the requested face."""


class AssumptionViolation(CsimError):
    """A standing assumption of the model is numerically violated."""


class NumericalFailure(CsimError):
    """Base class for integration and solver failures."""


class OverflowGuardError(NumericalFailure):
    """Trajectory norm exceeded the overflow guard (non-dissipative input)."""


class StepSizeUnderflowError(NumericalFailure):
    """Adaptive step shrank below the minimum step."""


class EigenSolverError(NumericalFailure):
    """QR or Jacobi iteration failed to converge."""


class ReconstructionError(NumericalFailure):
    """Carrying simplex sweep failed; ``graph`` holds the partial result if any."""

    def __init__(self, message, graph=None, rays=None):
        super().__init__(message)
        self.graph = graph
        self.rays = rays if rays is not None else []


class DegenerateFaceError(NumericalFailure):
    """Quantity undefined because the point sits on the boundary of its face."""
