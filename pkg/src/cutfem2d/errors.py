"""Exception types shared across the package."""


class MeshError(Exception):
    """Invalid mesh construction or query (e.g. patch of a boundary facet)."""


class GeometryError(Exception):
    """Geometry classification failure: under-resolved interface or body
    touching the outer boundary."""


class TransferError(Exception):
    """Inter-step transfer found a required DOF that was inactive at the
    previous step (extension strip too thin)."""


class SolverError(Exception):
    """Singular or numerically unreliable linear solve."""


class CouplingError(Exception):
    """The partitioned interface-velocity iteration did not converge."""


class AleError(Exception):
    """Fitted-mesh reference solver failure (e.g. mesh tangling)."""
