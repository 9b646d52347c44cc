"""Volume norms, discrete fractional trace norms and boundary functionals.

The H^{1/2}(Γi) norm is the discrete interpolation norm built from the
boundary mass matrix M and the boundary H¹ matrix A = K + M: with the
generalized eigenpairs A v_k = λ_k M v_k (M-orthonormal),

    ‖g‖²_{1/2}  = Σ λ_k^{1/2} c_k²,     c = Vᵀ M g,
    ‖f‖²_{-1/2} = Σ λ_k^{-1/2} (v_kᵀ f)²,

the second being the exact dual norm of the first on the trace space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .assembly import (
    EdgeGeometry,
    FormKind,
    Geometry,
    LoadKind,
    assemble_functional,
    assemble_matrix,
    evaluate,
)
from .errors import ConfigurationError, NumericalError
from .mesh import GAMMA1, GAMMA2
from .spaces import FeSpace

MAX_TRACE_DOFS = 2000


# --- volume norms -----------------------------------------------------------

def _gram(space: FeSpace, kind: FormKind):
    key = ("gram", kind)
    if key not in space._cache:
        space._cache[key] = assemble_matrix(kind, space)
    return space._cache[key]


def l2_norm(space: FeSpace, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (_gram(space, FormKind.MASS) @ v), 0.0)))


def h1_norm(space: FeSpace, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    val = v @ (_gram(space, FormKind.MASS) @ v) + v @ (_gram(space, FormKind.GRAD_GRAD) @ v)
    return float(np.sqrt(max(val, 0.0)))


def h1_seminorm(space: FeSpace, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (_gram(space, FormKind.GRAD_GRAD) @ v), 0.0)))


def error_norms(
    space: FeSpace,
    coeffs: np.ndarray,
    exact: Callable,
    exact_grad: Callable | None = None,
    degree: int = 8,
) -> tuple[float, float]:
    """L² and H¹ distances between a discrete field and a closed-form one.

    ``exact_grad(x, y)`` returns ∂/∂x, ∂/∂y stacked as ``(2,) + x.shape`` for
    scalars and ``(2, 2) + x.shape`` (component, direction) for vectors.
    Without it the H¹ entry is ``nan``.
    """
    g = Geometry(space, degree)
    c = space.components
    loc = np.asarray(coeffs)[space.dof_map].reshape(len(g.jxw), -1, c)   # (M, n, c)
    uh = np.einsum("qn,mnc->cmq", g.values, loc)
    x, y = g.points[..., 0], g.points[..., 1]
    ue = evaluate(exact, x, y, c)
    l2 = np.einsum("mq,cmq->", g.jxw, (uh - ue) ** 2)
    if exact_grad is None:
        return float(np.sqrt(l2)), float("nan")
    duh = np.einsum("mqnd,mnc->cdmq", g.grads, loc)
    ge = np.asarray(exact_grad(x, y), dtype=float)
    ge = np.broadcast_to(ge, (2,) + x.shape) if c == 1 else np.broadcast_to(ge, (2, 2) + x.shape)
    ge = ge.reshape(c, 2, *x.shape)
    semi = np.einsum("mq,cdmq->", g.jxw, (duh - ge) ** 2)
    return float(np.sqrt(l2)), float(np.sqrt(l2 + semi))


def boundary_l2_error(space: FeSpace, coeffs: np.ndarray, exact: Callable, marker: int,
                      npts: int = 5) -> float:
    """‖u_h − u‖ in L²(Γ_marker) for a scalar field."""
    if space.components != 1:
        raise ConfigurationError("boundary_l2_error expects a scalar space")
    eg = EdgeGeometry(space, marker, npts)
    uh = np.einsum("qn,kn->kq", eg.values, np.asarray(coeffs)[eg.nodes])
    ue = evaluate(exact, eg.points[..., 0], eg.points[..., 1], 1)[0]
    return float(np.sqrt(np.sum(eg.jxw * (uh - ue) ** 2)))


# --- boundary functionals ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryFunctional:
    """Dual coefficients ⟨f, φ_i⟩ against the boundary basis functions of Γ_marker.

    ``values`` has shape ``(k,)`` for scalar functionals and ``(k, 2)`` for
    vector ones, aligned with ``nodes``.
    """

    marker: int
    degree: int
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != len(self.nodes):
            raise ConfigurationError("values and nodes differ in length")

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def _compatible(self, other: "BoundaryFunctional"):
        if (self.marker, self.degree) != (other.marker, other.degree) or not np.array_equal(
            self.nodes, other.nodes
        ):
            raise ConfigurationError("boundary functionals live on different dof sets")

    def __add__(self, other):
        self._compatible(other)
        return BoundaryFunctional(self.marker, self.degree, self.nodes, self.values + other.values)

    def __sub__(self, other):
        self._compatible(other)
        return BoundaryFunctional(self.marker, self.degree, self.nodes, self.values - other.values)

    def __mul__(self, s: float):
        return BoundaryFunctional(self.marker, self.degree, self.nodes, s * self.values)

    __rmul__ = __mul__

    def to_dof_vector(self, space: FeSpace) -> np.ndarray:
        """Global load vector with these pairings on the functional's dofs."""
        if space.degree != self.degree or space.components != self.components:
            raise ConfigurationError("space does not match the functional")
        out = np.zeros(space.ndofs)
        out[space.dofs_of_nodes(self.nodes)] = self.values.ravel()
        return out

    @classmethod
    def from_dof_vector(cls, space: FeSpace, vec: np.ndarray, marker: int) -> "BoundaryFunctional":
        """Restrict a global residual to the open boundary nodes of Γ_marker."""
        nodes, _ = space.boundary_nodes(marker, closed=False)
        vals = np.asarray(vec)[space.dofs_of_nodes(nodes)]
        if space.components == 2:
            vals = vals.reshape(-1, 2)
        return cls(marker, space.degree, nodes, vals)


def pressure_flux_functional(Q: FeSpace, p: np.ndarray, div_force: Callable,
                             marker: int = GAMMA1) -> BoundaryFunctional:
    """Variational Neumann flux ⟨∂p/∂ν, ψ_i⟩ = ∫∇p·∇ψ_i + ∫(div F) ψ_i on Γ1."""
    r = assemble_matrix(FormKind.GRAD_GRAD, Q) @ p
    r = r + assemble_functional(LoadKind.DOMAIN_SCALAR, Q, div_force)
    return BoundaryFunctional.from_dof_vector(Q, r, marker)


def traction_functional(V: FeSpace, u: np.ndarray, Q: FeSpace, p: np.ndarray,
                        force: Callable, marker: int = GAMMA2) -> BoundaryFunctional:
    """Variational traction ⟨t, φ_i⟩ = ½∫D(u):D(φ_i) − ∫p div φ_i − ∫F·φ_i on Γ2."""
    r = assemble_matrix(FormKind.SYM_GRAD_HALF, V) @ u
    r = r - assemble_matrix(FormKind.DIV_COUPLE, V, Q).T @ p
    r = r - assemble_functional(LoadKind.DOMAIN_LOAD, V, force)
    return BoundaryFunctional.from_dof_vector(V, r, marker)


def neumann_functional(Q: FeSpace, g: Callable, marker: int = GAMMA1) -> BoundaryFunctional:
    """L² pairing ∫_Γ1 g ψ_i as a boundary functional."""
    return BoundaryFunctional.from_dof_vector(
        Q, assemble_functional(LoadKind.NEUMANN_PAIR, Q, g, marker), marker
    )


def traction_pair_functional(V: FeSpace, t: Callable, marker: int = GAMMA2) -> BoundaryFunctional:
    """L² pairing ∫_Γ2 t·φ_i as a boundary functional."""
    return BoundaryFunctional.from_dof_vector(
        V, assemble_functional(LoadKind.TRACTION_PAIR, V, t, marker), marker
    )


# --- fractional trace norms -------------------------------------------------

@dataclass(frozen=True, eq=False)
class TraceSpectrum:
    marker: int
    degree: int
    closed: bool
    nodes: np.ndarray
    mass: np.ndarray
    stiffness: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def coefficients(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape[0] != len(self.nodes):
            raise ConfigurationError(
                f"trace has {g.shape[0]} entries, spectrum has {len(self.nodes)} dofs"
            )
        return self.eigenvectors.T @ (self.mass @ g)


def trace_spectrum(space: FeSpace, marker: int, closed: bool = True) -> TraceSpectrum:
    """Generalized eigen-decomposition of (A, M) on the boundary nodes of Γ_marker.

    ``closed=True`` uses every node on the closure of Γ_marker (traces of
    H¹ functions); ``closed=False`` drops the junction nodes shared with the
    other marker, which is the dof set of the boundary functionals.
    """
    key = ("spectrum", marker, closed)
    S = space.scalar()
    if key in S._cache:
        return S._cache[key]
    nodes, _ = S.boundary_nodes(marker, closed=closed)
    if len(nodes) == 0:
        raise ConfigurationError(f"Γ{marker} has no boundary dofs")
    if len(nodes) > MAX_TRACE_DOFS:
        raise ConfigurationError(
            f"{len(nodes)} boundary dofs exceed the dense eigensolve cap {MAX_TRACE_DOFS}"
        )
    idx = np.ix_(nodes, nodes)
    M = assemble_matrix(FormKind.BOUNDARY_MASS, S, marker=marker)[idx].toarray()
    A = assemble_matrix(FormKind.BOUNDARY_H1, S, marker=marker)[idx].toarray()
    try:
        lam, vecs = sla.eigh(A, M)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"trace eigensolve failed: {exc}") from None
    for a in (M, A, lam, vecs):
        a.setflags(write=False)
    spec = TraceSpectrum(marker, S.degree, closed, nodes, M, A, lam, vecs)
    S._cache[key] = spec
    return spec


def _as_values(spec: TraceSpectrum, f) -> np.ndarray:
    if isinstance(f, BoundaryFunctional):
        if f.marker != spec.marker or f.degree != spec.degree or not np.array_equal(
            f.nodes, spec.nodes
        ):
            raise ConfigurationError("functional and spectrum use different boundary dofs")
        return f.values
    f = np.asarray(f, dtype=float)
    if f.shape[0] != len(spec.nodes):
        raise ConfigurationError(
            f"functional has {f.shape[0]} entries, spectrum has {len(spec.nodes)} dofs"
        )
    return f


def h_half_norm(spec: TraceSpectrum, g: np.ndarray) -> float:
    """Discrete H^{1/2}(Γi) norm of a trace given by its nodal values."""
    c = spec.coefficients(g)
    w = np.sqrt(np.maximum(spec.eigenvalues, 0.0))
    w = w if c.ndim == 1 else w[:, None]
    return float(np.sqrt(np.sum(w * c**2)))


def h_minus_half_norm(spec: TraceSpectrum, f) -> float:
    """Dual norm of a boundary functional (pairings against the trace basis)."""
    vals = _as_values(spec, f)
    d = spec.eigenvectors.T @ vals
    w = 1.0 / np.sqrt(spec.eigenvalues)
    w = w if d.ndim == 1 else w[:, None]
    return float(np.sqrt(np.sum(w * d**2)))


def riesz_image(spec: TraceSpectrum, g: np.ndarray) -> np.ndarray:
    """Functional attaining equality in |⟨f, g⟩| ≤ ‖f‖_{-1/2} ‖g‖_{1/2}."""
    c = spec.coefficients(g)
    w = np.sqrt(spec.eigenvalues)
    w = w if c.ndim == 1 else w[:, None]
    return spec.mass @ (spec.eigenvectors @ (w * c))


def trace_l2_h1(spec: TraceSpectrum, g: np.ndarray) -> tuple[float, float]:
    """L²(Γi) and H¹(Γi) norms of a trace from the same spectral expansion."""
    c = spec.coefficients(g)
    lam = spec.eigenvalues if c.ndim == 1 else spec.eigenvalues[:, None]
    return float(np.sqrt(np.sum(c**2))), float(np.sqrt(np.sum(lam * c**2)))


def gagliardo_norm(space: FeSpace, g: np.ndarray, marker: int, npts: int = 4) -> float:
    """Fractional H^{1/2} norm by the double integral over Γ_marker.

    Uses the 1-D kernel |g(x) − g(y)|²/|x − y|² with tensor Gauss quadrature
    on every pair of distinct edges; same-edge pairs are skipped.  ``g`` holds
    nodal values of a scalar field on ``space`` (full length).
    """
    S = space.scalar()
    eg = EdgeGeometry(S, marker, npts)
    vals = np.einsum("qn,kn->kq", eg.values, np.asarray(g)[eg.nodes]).ravel()
    pts = eg.points.reshape(-1, 2)
    w = eg.jxw.ravel()
    edge = np.repeat(np.arange(len(eg.jxw)), eg.jxw.shape[1])
    l2sq = float(np.sum(w * vals**2))
    diff = vals[:, None] - vals[None, :]
    dist2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    mask = edge[:, None] != edge[None, :]
    kernel = np.where(mask, diff**2 / np.where(mask, dist2, 1.0), 0.0)
    semi = float(w @ kernel @ w)
    return float(np.sqrt(l2sq + semi))


__all__ = [
    "l2_norm",
    "h1_norm",
    "h1_seminorm",
    "error_norms",
    "boundary_l2_error",
    "BoundaryFunctional",
    "pressure_flux_functional",
    "traction_functional",
    "neumann_functional",
    "traction_pair_functional",
    "TraceSpectrum",
    "trace_spectrum",
    "h_half_norm",
    "h_minus_half_norm",
    "riesz_image",
    "trace_l2_h1",
    "gagliardo_norm",
]
