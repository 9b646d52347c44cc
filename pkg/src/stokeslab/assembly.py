"""Quadrature and assembly of the bilinear forms and load functionals.

Element integrals are evaluated with a collapsed Gauss rule on triangles
(exact up to the requested polynomial degree) and Gauss-Legendre on
boundary edges.  Assembly is vectorised over cells and reduced into CSR in
a fixed order, so results do not depend on any threading.
"""
from __future__ import annotations

import enum
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .mesh import GAMMA1, GAMMA2
from .spaces import FeSpace, barycentric_gradients, tabulate, tabulate_edge

TRIANGLE_DEGREE = 4
EDGE_POINTS = 3  # Gauss-Legendre, exact to degree 5


# --- quadrature -------------------------------------------------------------

def triangle_quadrature(degree: int = TRIANGLE_DEGREE) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed (Duffy) Gauss rule on the reference triangle.

    Exact for polynomials of total degree ``degree``; weights sum to 1/2.
    """
    m = max(1, int(np.ceil((degree + 2) / 2)))
    g, w = np.polynomial.legendre.leggauss(m)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    U, S = np.meshgrid(g, g, indexing="ij")
    WU, WS = np.meshgrid(w, w, indexing="ij")
    xi = U.ravel()
    eta = (S * (1.0 - U)).ravel()
    weights = (WU * WS * (1.0 - U)).ravel()
    return np.column_stack([xi, eta]), weights


def edge_quadrature(npts: int = EDGE_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (g + 1.0), 0.5 * w


# --- form catalogue ---------------------------------------------------------

class FormKind(enum.Enum):
    SYM_GRAD_HALF = "sym_grad_half"      # ½∫ D(u):D(φ)
    CURL_CURL = "curl_curl"              # ∫ curl u curl v
    GRAD_DIV = "grad_div"                # ∫ div u div v
    DIV_COUPLE = "div_couple"            # ∫ p div φ
    GRAD_GRAD = "grad_grad"              # ∫ ∇p·∇ψ
    MASS = "mass"                        # ∫ p ψ
    BOUNDARY_MASS = "boundary_mass"      # ∫_Γi p ψ
    BOUNDARY_H1 = "boundary_h1"          # ∫_Γi (∂s p ∂s ψ + p ψ)
    BOUNDARY_NORMAL_TRACE = "boundary_normal_trace"  # ∫_Γi p φ·ν


_BOUNDARY_KINDS = {FormKind.BOUNDARY_MASS, FormKind.BOUNDARY_H1, FormKind.BOUNDARY_NORMAL_TRACE}


class Geometry:
    """Per-cell quadrature data for one space and rule (internal helper)."""

    def __init__(self, space: FeSpace, degree: int):
        mesh = space.mesh
        pts, w = triangle_quadrature(degree)
        self.values, dlam = tabulate(space.degree, pts)            # (q, n), (q, n, 3)
        gl = barycentric_gradients(mesh)                             # (M, 3, 2)
        self.grads = np.einsum("qnk,mkd->mqnd", dlam, gl)            # (M, q, n, 2)
        self.jxw = 2.0 * mesh.cell_areas[:, None] * w[None, :]       # (M, q)
        lam = np.column_stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
        corners = mesh.vertices[mesh.cells]                          # (M, 3, 2)
        self.points = np.einsum("qk,mkd->mqd", lam, corners)         # (M, q, 2)


def _vector_gradients(grads: np.ndarray) -> np.ndarray:
    """Gradient matrices of interleaved vector basis functions.

    For local dof ``2a + c`` (basis N_a in component c) the 2×2 gradient has
    row c equal to ∇N_a and zeros elsewhere.  Returns (M, q, 2n, 2, 2).
    """
    M, q, n, _ = grads.shape
    G = np.zeros((M, q, n, 2, 2, 2))
    G[:, :, :, 0, 0, :] = grads
    G[:, :, :, 1, 1, :] = grads
    return G.reshape(M, q, 2 * n, 2, 2)


def _scatter(rows_map, cols_map, local, shape) -> sp.csr_matrix:
    M, nr = rows_map.shape
    nc = cols_map.shape[1]
    rows = np.broadcast_to(rows_map[:, :, None], (M, nr, nc)).ravel()
    cols = np.broadcast_to(cols_map[:, None, :], (M, nr, nc)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _check_pair(kind, trial: FeSpace, test: FeSpace):
    if trial.mesh is not test.mesh:
        raise ConfigurationError("trial and test spaces live on different meshes")
    arity = (test.components, trial.components)
    allowed = {
        FormKind.SYM_GRAD_HALF: {(2, 2)},
        FormKind.CURL_CURL: {(2, 2)},
        FormKind.GRAD_DIV: {(2, 2)},
        FormKind.DIV_COUPLE: {(1, 2), (2, 1)},
        FormKind.GRAD_GRAD: {(1, 1), (2, 2)},
        FormKind.MASS: {(1, 1), (2, 2)},
        FormKind.BOUNDARY_MASS: {(1, 1), (2, 2)},
        FormKind.BOUNDARY_H1: {(1, 1)},
        FormKind.BOUNDARY_NORMAL_TRACE: {(1, 2), (2, 1)},
    }[kind]
    if arity not in allowed:
        raise ConfigurationError(
            f"{kind.name} does not accept (test, trial) component counts {arity}"
        )
    if kind not in (FormKind.DIV_COUPLE, FormKind.BOUNDARY_NORMAL_TRACE) and (
        trial.degree != test.degree
    ):
        raise ConfigurationError(f"{kind.name} expects trial and test of equal degree")


def assemble_matrix(
    kind: FormKind,
    trial: FeSpace,
    test: FeSpace | None = None,
    marker: int | None = None,
    quad_degree: int = TRIANGLE_DEGREE,
) -> sp.csr_matrix:
    """Sparse matrix of a bilinear form, rows indexed by ``test`` dofs.

    ``DIV_COUPLE`` is ∫ q div φ with q scalar and φ vector, whichever of
    the two spaces plays the test role.  Boundary kinds need ``marker``.
    """
    test = trial if test is None else test
    _check_pair(kind, trial, test)
    if kind in _BOUNDARY_KINDS:
        if marker is None:
            raise ConfigurationError(f"{kind.name} needs a boundary marker")
        return _assemble_boundary(kind, trial, test, marker)

    if kind in (FormKind.DIV_COUPLE,) and test.components == 2:
        return assemble_matrix(kind, test, trial, quad_degree=quad_degree).T.tocsr()

    gtest = Geometry(test, quad_degree)
    gtrial = gtest if trial is test else Geometry(trial, quad_degree)
    jxw = gtest.jxw
    shape = (test.ndofs, trial.ndofs)

    if kind is FormKind.MASS:
        loc = np.einsum("mq,qa,qb->mab", jxw, gtest.values, gtrial.values)
    elif kind is FormKind.GRAD_GRAD:
        loc = np.einsum("mq,mqad,mqbd->mab", jxw, gtest.grads, gtrial.grads)
    elif kind is FormKind.SYM_GRAD_HALF:
        G = _vector_gradients(gtest.grads)
        D = 0.5 * (G + np.swapaxes(G, -1, -2))
        loc = 0.5 * np.einsum("mq,mqaij,mqbij->mab", jxw, D, D)
    elif kind is FormKind.CURL_CURL:
        G = _vector_gradients(gtest.grads)
        curl = G[..., 1, 0] - G[..., 0, 1]
        loc = np.einsum("mq,mqa,mqb->mab", jxw, curl, curl)
    elif kind is FormKind.GRAD_DIV:
        G = _vector_gradients(gtest.grads)
        div = G[..., 0, 0] + G[..., 1, 1]
        loc = np.einsum("mq,mqa,mqb->mab", jxw, div, div)
    elif kind is FormKind.DIV_COUPLE:
        G = _vector_gradients(gtrial.grads)
        div = G[..., 0, 0] + G[..., 1, 1]
        loc = np.einsum("mq,qa,mqb->mab", jxw, gtest.values, div)
        return _scatter(test.dof_map, trial.dof_map, loc, shape)
    else:  # pragma: no cover - guarded by _check_pair
        raise ConfigurationError(f"unsupported form {kind}")

    if test.components == 2 and kind in (FormKind.MASS, FormKind.GRAD_GRAD):
        loc = np.einsum("mab,cd->macbd", loc, np.eye(2)).reshape(
            len(loc), 2 * loc.shape[1], 2 * loc.shape[2]
        )
    return _scatter(test.dof_map, trial.dof_map, loc, shape)


class EdgeGeometry:
    """Quadrature data on the boundary edges of one marker (internal helper)."""

    def __init__(self, space: FeSpace, marker: int, npts: int = EDGE_POINTS):
        mesh = space.mesh
        self.positions = mesh.edges_with_marker(marker)
        if len(self.positions) == 0:
            raise ConfigurationError(f"boundary marker Γ{marker} has no edges")
        t, w = edge_quadrature(npts)
        self.values, dt = tabulate_edge(space.degree, t)             # (q, n)
        be = mesh.boundary_edges[self.positions]
        a = mesh.vertices[be[:, 0]]
        b = mesh.vertices[be[:, 1]]
        self.lengths = mesh.boundary_lengths[self.positions]
        self.jxw = self.lengths[:, None] * w[None, :]                # (K, q)
        self.dvalues = dt[None, :, :] / self.lengths[:, None, None]  # (K, q, n)
        self.points = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        self.normals = mesh.boundary_normals[self.positions]         # (K, 2)
        self.nodes = space.edge_nodes(self.positions)                 # (K, n)


def _edge_dofs(space: FeSpace, nodes: np.ndarray) -> np.ndarray:
    if space.components == 1:
        return nodes
    return (2 * nodes[:, :, None] + np.arange(2)).reshape(len(nodes), -1)


def _assemble_boundary(kind, trial: FeSpace, test: FeSpace, marker: int) -> sp.csr_matrix:
    shape = (test.ndofs, trial.ndofs)
    if kind is FormKind.BOUNDARY_NORMAL_TRACE:
        if test.components == 2:
            return _assemble_boundary(kind, test, trial, marker).T.tocsr()
        # rows: scalar test, cols: vector trial
        es = EdgeGeometry(test, marker)
        ev = EdgeGeometry(trial, marker)
        vn = np.einsum("qb,kc->kqbc", ev.values, ev.normals).reshape(len(ev.jxw), len(ev.values), -1)
        loc = np.einsum("kq,qa,kqb->kab", es.jxw, es.values, vn)
        return _scatter(es.nodes, _edge_dofs(trial, ev.nodes), loc, shape)

    eg = EdgeGeometry(test, marker)
    loc = np.einsum("kq,qa,qb->kab", eg.jxw, eg.values, eg.values)
    if kind is FormKind.BOUNDARY_H1:
        loc = loc + np.einsum("kq,kqa,kqb->kab", eg.jxw, eg.dvalues, eg.dvalues)
    if test.components == 2:
        loc = np.einsum("kab,cd->kacbd", loc, np.eye(2)).reshape(len(loc), 2 * loc.shape[1], -1)
    dofs = _edge_dofs(test, eg.nodes)
    return _scatter(dofs, dofs, loc, shape)


# --- functionals ------------------------------------------------------------

class LoadKind(enum.Enum):
    DOMAIN_LOAD = "domain_load"          # ∫ F·φ
    DOMAIN_SCALAR = "domain_scalar"      # ∫ f ψ
    TRACTION_PAIR = "traction_pair"      # ∫_Γ2 t·φ
    NEUMANN_PAIR = "neumann_pair"        # ∫_Γ1 g ψ
    PRESSURE_FLUX = "pressure_flux"      # ∫_Γ2 p^b φ·ν


_DEFAULT_MARKER = {
    LoadKind.TRACTION_PAIR: GAMMA2,
    LoadKind.NEUMANN_PAIR: GAMMA1,
    LoadKind.PRESSURE_FLUX: GAMMA2,
}


def evaluate(f: Callable, x: np.ndarray, y: np.ndarray, components: int) -> np.ndarray:
    """Evaluate user data, broadcasting constants; shape (components,) + x.shape."""
    val = f(x, y)
    if components == 1:
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape)[None]
    return np.stack([np.broadcast_to(np.asarray(val[c], dtype=float), x.shape) for c in range(2)])


def assemble_functional(
    kind: LoadKind,
    test: FeSpace,
    data: Callable,
    marker: int | None = None,
    quad_degree: int = TRIANGLE_DEGREE,
    edge_points: int = EDGE_POINTS,
) -> np.ndarray:
    """Coefficient vector ``b_i = ℓ(φ_i)`` of a linear functional."""
    needs_vector = kind in (LoadKind.DOMAIN_LOAD, LoadKind.TRACTION_PAIR, LoadKind.PRESSURE_FLUX)
    if needs_vector != (test.components == 2):
        raise ConfigurationError(
            f"{kind.name} needs a {'vector' if needs_vector else 'scalar'} test space"
        )
    out = np.zeros(test.ndofs)

    if kind in (LoadKind.DOMAIN_LOAD, LoadKind.DOMAIN_SCALAR):
        g = Geometry(test, quad_degree)
        F = evaluate(data, g.points[..., 0], g.points[..., 1], test.components)  # (c, M, q)
        loc = np.einsum("mq,qa,cmq->mac", g.jxw, g.values, F).reshape(len(g.jxw), -1)
        np.add.at(out, test.dof_map.ravel(), loc.ravel())
        return out

    marker = _DEFAULT_MARKER[kind] if marker is None else marker
    eg = EdgeGeometry(test, marker, edge_points)
    x, y = eg.points[..., 0], eg.points[..., 1]
    if kind is LoadKind.PRESSURE_FLUX:
        p = evaluate(data, x, y, 1)[0]                                # (K, q)
        vals = p[None] * eg.normals.T[:, :, None]                     # (2, K, q)
    else:
        vals = evaluate(data, x, y, test.components)
    loc = np.einsum("kq,qa,ckq->kac", eg.jxw, eg.values, vals).reshape(len(eg.jxw), -1)
    np.add.at(out, _edge_dofs(test, eg.nodes).ravel(), loc.ravel())
    return out
