"""Exception taxonomy shared across the package."""


class TeichpcError(Exception):
    """Base class for all package errors."""


class ParseError(TeichpcError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc = f" [{loc}]"
        super().__init__(f"{message}{loc}")


class DuplicatePointError(TeichpcError):
    """Two points coincide exactly; separation distance would be zero."""


class DegenerateNeighborhoodError(TeichpcError):
    """Neighborhood has rank < 2; no tangent plane can be fit."""


class BoundaryError(TeichpcError):
    """Boundary detection or chaining failed to produce a closed cycle."""


class SingularStencilError(TeichpcError):
    """A local least-squares system is singular or too ill-conditioned."""

    def __init__(self, message, indices=None, condition=None):
        self.indices = indices
        self.condition = condition
        super().__init__(message)


class InfeasibleCoefficientError(TeichpcError):
    """A Beltrami-coefficient field has |mu| >= 1 where feasibility is required."""


class DegenerateJacobianError(TeichpcError):
    """Complex derivative estimate vanished; coefficient undefined."""


class SingularSystemError(TeichpcError):
    """Constrained sparse solve failed even in the least-squares fallback."""

    def __init__(self, message, condition=None):
        self.condition = condition
        super().__init__(message)


class RegistrationError(TeichpcError):
    """One or more pairwise registrations failed; the distance matrix is
    incomplete and therefore rejected."""

    def __init__(self, message, failures=()):
        self.failures = tuple(failures)
        super().__init__(message)
