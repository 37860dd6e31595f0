"""C1-conforming finite elements for the (nematic) Helmholtz-Korteweg equation."""

from hkfem.mesh import TriMesh, build_unit_square_mesh, build_rectangle_mesh, refine_uniform, alfeld_split
from hkfem.element import ElementKind
from hkfem.space import FeSpace, FeFunction, ExactSolution, build_space
from hkfem.forms import BcKind, DirectorField, ProblemConfig

__all__ = [
    "TriMesh",
    "build_unit_square_mesh",
    "build_rectangle_mesh",
    "refine_uniform",
    "alfeld_split",
    "ElementKind",
    "FeSpace",
    "FeFunction",
    "ExactSolution",
    "build_space",
    "BcKind",
    "DirectorField",
    "ProblemConfig",
]

__version__ = "0.1.0"
