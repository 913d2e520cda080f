"""Error hierarchy shared by the numerical services, the CLI and the API."""

from typing import Optional, Sequence


class IIMError(Exception):
    """Base class for all solver errors."""


class ContractViolationError(IIMError, ValueError):
    """Input violates an operator's precondition (shape, finiteness, ghost fill)."""


class DegenerateElementError(IIMError, ValueError):
    """Interface element or shape with coincident points."""


class GeometryError(IIMError):
    """Inconsistent interface/grid geometry.

    Attributes:
        location: Physical coordinates of the offending grid point, if known
    """

    def __init__(self, message: str, location: Optional[tuple[float, float]] = None):
        if location is not None:
            message = f"{message} at ({location[0]:.6g}, {location[1]:.6g})"
        super().__init__(message)
        self.location = location


class ProbeOutsideDomainError(IIMError, ValueError):
    """Interpolation or traction probe falls outside the physical domain."""


class SolverError(IIMError):
    """Iterative solve failed or the time step became unstable.

    Attributes:
        residuals: Residual history collected before the failure
    """

    def __init__(self, message: str, residuals: Sequence[float] = ()):
        super().__init__(message)
        self.residuals = list(residuals)


class ProjectionSolveError(SolverError):
    """Mass-matrix solve of an L2 projection did not reach tolerance."""


class ConfigError(IIMError, ValueError):
    """Invalid scenario configuration, unknown preset or reference id."""


class InsufficientDataError(IIMError, ValueError):
    """Not enough samples for a diagnostic (e.g. shedding frequency)."""
