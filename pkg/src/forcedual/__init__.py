"""Force-space priors for real-time reduced deformable simulation.

Build simulation subspaces by pushing a Gaussian prior on nodal forces
through the linearized elastodynamic system, select among several such
subspaces online with a Bayes rule, and run reduced implicit dynamics in
the selected basis.
"""

from .errors import (
    ForceDualError,
    InputError,
    MeshError,
    NumericalError,
    ValidationError,
)
from .fem import MaterialParams, SystemOperators, build_operators
from .meshes import TetMesh, load_mesh

__all__ = [
    "ForceDualError",
    "InputError",
    "MeshError",
    "NumericalError",
    "ValidationError",
    "MaterialParams",
    "SystemOperators",
    "build_operators",
    "TetMesh",
    "load_mesh",
]

__version__ = "0.1.0"
