"""Finite element solvers for Stokes flow with traction or pressure boundary data.

The package provides P2/P1 Taylor-Hood discretizations of three problems on
2-D triangle meshes whose boundary is split into a no-slip part Γ1 and a
data part Γ2, plus tools that measure how far a pressure-Poisson solution
sits from the matching Stokes solution:

* ``S1``: Stokes equations with traction data on Γ2,
* ``S2``: curl-form Stokes equations with pressure and tangential data on Γ2,
* ``PP``: pressure-Poisson reformulation, solved pressure first.
"""
from .errors import (
    ConfigurationError,
    IllPosedError,
    NumericalError,
    SingularMatrixError,
    StokesLabError,
    UnsupportedGeometryError,
)
from .mesh import GAMMA1, GAMMA2, BcLayout, Mesh, generate_unit_square, refine_uniform, write_vtk
from .spaces import FeSpace, build_space, essential_constraints, interpolate
from .assembly import FormKind, LoadKind, assemble_functional, assemble_matrix
from .solvers import (
    FieldSolution,
    ProblemData,
    factor_solve,
    solve,
    solve_PP,
    solve_S1,
    solve_S2,
)
from .norms import (
    BoundaryFunctional,
    h_half_norm,
    h_minus_half_norm,
    h1_norm,
    l2_norm,
    pressure_flux_functional,
    trace_spectrum,
    traction_functional,
)
from .verify import (
    discrete_constants,
    manufactured,
    run_convergence,
    verify_estimate_S1,
    verify_estimate_S2,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "IllPosedError", "NumericalError", "SingularMatrixError",
    "StokesLabError", "UnsupportedGeometryError",
    "GAMMA1", "GAMMA2", "BcLayout", "Mesh", "generate_unit_square", "refine_uniform", "write_vtk",
    "FeSpace", "build_space", "essential_constraints", "interpolate",
    "FormKind", "LoadKind", "assemble_functional", "assemble_matrix",
    "FieldSolution", "ProblemData", "factor_solve", "solve", "solve_PP", "solve_S1", "solve_S2",
    "BoundaryFunctional", "h_half_norm", "h_minus_half_norm", "h1_norm", "l2_norm",
    "pressure_flux_functional", "trace_spectrum", "traction_functional",
    "discrete_constants", "manufactured", "run_convergence",
    "verify_estimate_S1", "verify_estimate_S2",
]
