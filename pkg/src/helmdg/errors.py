"""Exception hierarchy shared by all helmdg modules."""


class HelmDGError(Exception):
    """Base class for every error raised by helmdg."""


class InputError(HelmDGError, ValueError):
    """Invalid argument (empty marking set, p < 1, non-positive penalty...)."""


class MeshStructureError(HelmDGError):
    """Connectivity violates the matching-mesh assumption."""


class MeshSpecificationError(HelmDGError):
    """Boundary or region specification does not cover the mesh."""


class GeometryError(HelmDGError):
    """Degenerate geometry (zero-area triangle, singular Jacobian)."""


class CapabilityError(HelmDGError):
    """Requested feature lies outside the implemented tables."""


class NumericalError(HelmDGError):
    """A numerical procedure failed (singular Gram matrix, eigensolver)."""


class SolverError(NumericalError):
    """Linear solve failed or the system is numerically singular.

    ``cond_estimate`` carries the 1-norm condition estimate when available.
    """

    def __init__(self, message, cond_estimate=None):
        super().__init__(message)
        self.cond_estimate = cond_estimate


class ConfigError(HelmDGError):
    """Malformed study configuration."""
