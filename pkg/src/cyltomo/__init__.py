"""Travel-time tomography in a vertical cylinder.

Forward modeling by fast marching for the eikonal equation, reduction of the
inverse problem to a Volterra-type integral-differential system, and recovery
of the refractive index by minimizing a Carleman-weighted least-squares
functional with projected gradient descent.
"""

__version__ = "0.1.0"

from .geometry import CartGrid, CylGrid, CylinderSpec  # noqa: F401
from .phantom import InclusionSpec, RefractiveField  # noqa: F401
from .basis import BasisSet, build_basis  # noqa: F401
