"""High-order HPS direct solvers for PDEs on curved surfaces."""

__version__ = "0.1.0"

from .basis import build_reference_basis
from .geometry import SphereProjector, ImplicitProjector, chart_element
from .hps import Discretization, HpsSolver, build_tree, flux_jump
from .local import PdeCoefficients, assemble_local, local_solve
from .mesh import SurfaceMesh, load_off, save_off, rhombus_quadrilateralize, sphere_mesh
from .timestep import ImexScheme, Kinetics, TuringParams, run_simulation, run_evolving

__all__ = [
    "build_reference_basis", "SphereProjector", "ImplicitProjector", "chart_element",
    "Discretization", "HpsSolver", "build_tree", "flux_jump", "PdeCoefficients",
    "assemble_local", "local_solve", "SurfaceMesh", "load_off", "save_off",
    "rhombus_quadrilateralize", "sphere_mesh", "ImexScheme", "Kinetics", "TuringParams",
    "run_simulation", "run_evolving",
]
