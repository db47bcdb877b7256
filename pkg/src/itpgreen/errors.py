"""Exception types shared across the package."""


class ItpError(Exception):
    """Base class for all package errors."""


class InvalidMetricError(ItpError, ValueError):
    """Metric data is not symmetric positive definite, or the Jacobian is not positive."""


class ContrastError(ItpError, ValueError):
    """The diffusion contrast k is not admissible."""


class BranchError(ItpError, ArithmeticError):
    """A square-root argument lies on the branch cut."""


class DegeneracyError(ItpError, ArithmeticError):
    """A denominator of the symbol calculus is numerically zero."""


class ConfigurationError(ItpError, ValueError):
    """Inputs are inconsistent with the requested computation."""


class GridError(ItpError, ValueError):
    """Grids are incompatible, empty or under-resolved."""


class DivergenceError(ItpError, ArithmeticError):
    """An iterative series failed to converge."""


class GeometryError(ItpError, ValueError):
    """A subdomain is placed where the construction does not allow it."""


class ConfigValidationError(ConfigurationError):
    """A configuration field is invalid. ``path`` names the offending field."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"config field '{path}': {message}")
        self.path = path


class DependencyError(ItpError):
    """An upstream artifact required by an experiment is missing or incompatible."""
