"""Discrete Stokes (traction / pressure data) and pressure-Poisson solvers.

All three problems use P2 velocity and P1 pressure.  Sign convention for
traction data: the momentum equation reads

    ½∫ D(u):D(φ) − ∫ p div φ = ∫ F·φ + ⟨t, φ⟩_Γ2,

so that for smooth solutions ``t = ½ D(u)ν − pν`` on Γ2 and the body force
is ``F = −¼(Δu + ∇div u) + ∇p``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import FormKind, LoadKind, assemble_functional, assemble_matrix
from .errors import ConfigurationError, IllPosedError, SingularMatrixError
from .mesh import GAMMA1, GAMMA2, Mesh
from .spaces import ConstraintSet, FeSpace, build_space, essential_constraints

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
PIVOT_TOL = 1e-13


# --- linear algebra ---------------------------------------------------------

class Factorization:
    """Sparse LU (SuperLU, COLAMD ordering) with singularity checks."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"matrix must be square, got {A.shape}")
        self.A = A
        try:
            self._lu = splu(A, permc_spec="COLAMD", options=dict(SymmetricMode=False))
        except RuntimeError as exc:
            raise SingularMatrixError(f"factorization failed: {exc}") from None
        d = np.abs(self._lu.U.diagonal())
        if d.size and (not np.all(np.isfinite(d)) or d.min() <= PIVOT_TOL * d.max()):
            raise SingularMatrixError(
                f"numerically singular matrix (pivot ratio {d.min() / d.max():.3e})"
            )
        self.pivot_ratio = float(d.min() / d.max()) if d.size else 1.0
        self.row_swaps = int(np.count_nonzero(self._lu.perm_r != np.arange(A.shape[0])))

    def solve(self, b: np.ndarray) -> tuple[np.ndarray, float]:
        """Solve and return ``(x, relative residual)``; one refinement step if needed."""
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        bn = np.linalg.norm(b)
        if bn == 0.0:
            return x, 0.0
        r = b - self.A @ x
        rel = np.linalg.norm(r) / bn
        if rel > RESIDUAL_TOL:
            x = x + self._lu.solve(r)
            rel = np.linalg.norm(b - self.A @ x) / bn
        if not np.isfinite(rel) or rel > RESIDUAL_TOL:
            raise SingularMatrixError(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL}")
        return x, float(rel)


def factor_solve(A, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve of ``A x = b``."""
    return Factorization(A).solve(b)[0]


# --- data containers --------------------------------------------------------

Field = Callable[[np.ndarray, np.ndarray], Any]


@dataclass(frozen=True)
class ProblemData:
    """Pointwise data for the three problems.

    ``traction`` may also be a :class:`~stokeslab.norms.BoundaryFunctional`
    on Γ2, in which case its coefficients are used as the pairing directly.
    """

    force: Field | None = None
    div_force: Field | None = None
    traction: Any = None
    neumann: Field | None = None
    pressure_bc: Field | None = None

    def require(self, problem: str, *names: str):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigurationError(f"{problem} needs data fields {missing}")


def zero_vector(x, y):
    return (np.zeros_like(x), np.zeros_like(x))


def zero_scalar(x, y):
    return np.zeros_like(x)


@dataclass
class FieldSolution:
    """Velocity/pressure coefficients with the spaces and diagnostics that produced them."""

    problem: str
    velocity_space: FeSpace
    pressure_space: FeSpace
    velocity: np.ndarray
    pressure: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def mesh(self) -> Mesh:
        return self.velocity_space.mesh

    def vertex_fields(self):
        V = self.mesh.num_vertices
        u = self.velocity.reshape(-1, 2)[:V]
        return [(f"velocity_{self.problem}", u), (f"pressure_{self.problem}", self.pressure[:V])]


def taylor_hood(mesh: Mesh) -> tuple[FeSpace, FeSpace]:
    return build_space(mesh, 2, 2), build_space(mesh, 1, 1)


def _traction_load(V: FeSpace, traction) -> np.ndarray:
    if hasattr(traction, "to_dof_vector"):
        return traction.to_dof_vector(V)
    return assemble_functional(LoadKind.TRACTION_PAIR, V, traction)


def _solve_constrained(A, b, cons: ConstraintSet, label: str):
    x = cons.apply(np.zeros(A.shape[0]))
    free = cons.free
    rhs = b[free] - A[free][:, cons.dofs] @ cons.values
    fac = Factorization(A[free][:, free])
    x[free], res = fac.solve(rhs)
    return x, dict(residual=res, pivot_ratio=fac.pivot_ratio, row_swaps=fac.row_swaps,
                   unknowns=len(free), system=label)


def _saddle_solve(A, B, f, cons: ConstraintSet, label: str):
    """Solve ``[A Bᵀ; B 0][u; p] = [f; 0]`` with essential constraints on u."""
    nu, npr = A.shape[0], B.shape[0]
    u = cons.apply(np.zeros(nu))
    free = cons.free
    Aff = A[free][:, free]
    Bf = B[:, free]
    rhs = np.concatenate([f[free] - A[free][:, cons.dofs] @ cons.values,
                          -B[:, cons.dofs] @ cons.values])
    K = sp.bmat([[Aff, Bf.T], [Bf, None]], format="csc")
    fac = Factorization(K)
    x, res = fac.solve(rhs)
    u[free] = x[: len(free)]
    p = x[len(free):]
    diag = dict(residual=res, pivot_ratio=fac.pivot_ratio, row_swaps=fac.row_swaps,
                unknowns=len(free) + npr, system=label)
    return u, p, diag


def _require_gamma2(mesh: Mesh, problem: str):
    if len(mesh.edges_with_marker(GAMMA2)) == 0:
        raise IllPosedError(
            f"{problem}: Γ2 is empty; the pressure is not determined without |Γ2| > 0"
        )


# --- problems ---------------------------------------------------------------

def solve_S1(mesh: Mesh, data: ProblemData) -> FieldSolution:
    """Stokes problem with no-slip on Γ1 and traction data on Γ2."""
    data.require("S1", "force", "traction")
    _require_gamma2(mesh, "S1")
    V, Q = taylor_hood(mesh)
    A = assemble_matrix(FormKind.SYM_GRAD_HALF, V)
    B = -assemble_matrix(FormKind.DIV_COUPLE, V, Q)
    f = assemble_functional(LoadKind.DOMAIN_LOAD, V, data.force) + _traction_load(V, data.traction)
    cons = essential_constraints(V, "velocity_noslip_gamma1")
    try:
        u, p, diag = _saddle_solve(A, B, f, cons, "S1")
    except SingularMatrixError as exc:
        raise IllPosedError(f"S1 system is singular ({exc}); check that Γ2 is nonempty") from None
    log.debug("S1 solved: %s", diag)
    return FieldSolution("S1", V, Q, u, p, diag)


S2_GRAD_DIV = 1.0


def solve_S2(mesh: Mesh, data: ProblemData, grad_div: float = S2_GRAD_DIV) -> FieldSolution:
    """Curl-form Stokes problem with tangential no-slip and pressure data on Γ2.

    Parameters
    ----------
    grad_div
        Weight of the added term ``∫ div u div v``.  It vanishes on every
        divergence-free field, so the exact solution is unchanged, but it
        removes the discrete curl-free gradient modes that Taylor-Hood
        admits once the mesh is fine enough (from n = 6 on the unit
        square).  Pass 0 for the unmodified curl form.
    """
    data.require("S2", "force", "pressure_bc")
    _require_gamma2(mesh, "S2")
    if grad_div < 0:
        raise ConfigurationError(f"grad_div must be non-negative, got {grad_div}")
    V, Q = taylor_hood(mesh)
    cons = essential_constraints(V, "H_space")
    A = assemble_matrix(FormKind.CURL_CURL, V)
    if grad_div:
        A = A + grad_div * assemble_matrix(FormKind.GRAD_DIV, V)
    B = -assemble_matrix(FormKind.DIV_COUPLE, V, Q)
    f = assemble_functional(LoadKind.DOMAIN_LOAD, V, data.force) - assemble_functional(
        LoadKind.PRESSURE_FLUX, V, data.pressure_bc
    )
    try:
        u, p, diag = _saddle_solve(A, B, f, cons, "S2")
    except SingularMatrixError as exc:
        raise IllPosedError(
            f"S2 system is singular ({exc}): discrete stability of the curl form failed"
        ) from None
    diag["grad_div"] = float(grad_div)
    log.debug("S2 solved: %s", diag)
    return FieldSolution("S2", V, Q, u, p, diag)


def solve_pressure_poisson(Q: FeSpace, data: ProblemData) -> tuple[np.ndarray, dict]:
    """First stage of the pressure-Poisson problem: the scalar mixed BVP for p."""
    K = assemble_matrix(FormKind.GRAD_GRAD, Q)
    b = -assemble_functional(LoadKind.DOMAIN_SCALAR, Q, data.div_force)
    if len(Q.mesh.edges_with_marker(GAMMA1)):
        b += assemble_functional(LoadKind.NEUMANN_PAIR, Q, data.neumann)
    cons = essential_constraints(Q, "pressure_dirichlet_gamma2", data.pressure_bc)
    return _solve_constrained(K, b, cons, "PP-pressure")


def solve_PP(mesh: Mesh, data: ProblemData) -> FieldSolution:
    """Pressure-Poisson problem, solved pressure first, then velocity."""
    data.require("PP", "force", "div_force", "traction", "neumann", "pressure_bc")
    _require_gamma2(mesh, "PP")
    V, Q = taylor_hood(mesh)
    p, diag_p = solve_pressure_poisson(Q, data)
    A = assemble_matrix(FormKind.SYM_GRAD_HALF, V)
    D = assemble_matrix(FormKind.DIV_COUPLE, V, Q)
    f = (assemble_functional(LoadKind.DOMAIN_LOAD, V, data.force)
         + _traction_load(V, data.traction) + D.T @ p)
    cons = essential_constraints(V, "velocity_noslip_gamma1")
    try:
        u, diag_u = _solve_constrained(A, f, cons, "PP-velocity")
    except SingularMatrixError as exc:
        raise IllPosedError(f"PP velocity system is singular ({exc})") from None
    diag = dict(pressure=diag_p, velocity=diag_u,
                residual=max(diag_p["residual"], diag_u["residual"]))
    return FieldSolution("PP", V, Q, u, p, diag)


SOLVERS = {"S1": solve_S1, "S2": solve_S2, "PP": solve_PP}


def solve(problem: str, mesh: Mesh, data: ProblemData) -> FieldSolution:
    solver = SOLVERS.get(problem.upper())
    if solver is None:
        raise ConfigurationError(f"unknown problem {problem!r}; choose from {sorted(SOLVERS)}")
    return solver(mesh, data)
