"""Exception types shared across the package."""


class GridError(ValueError):
    """Invalid grid, mesh, or axis specification."""


class MeshMismatchError(GridError):
    """An operation received a field living on the wrong mesh."""


class AdmissibilityError(ValueError):
    """Weight parameters violate the admissibility constraints."""


class SolverError(RuntimeError):
    """A linear or time-stepping solve failed its residual contract."""


class QuadratureError(RuntimeError):
    """Step-halving quadrature failed to stabilise."""


class CertificationError(ValueError):
    """A candidate source failed the admissibility certificate."""


class EmptyMaskError(ValueError):
    """A pointwise recovery has no points above the cutoff."""


class ConfigError(ValueError):
    """A configuration file or override failed schema validation."""
