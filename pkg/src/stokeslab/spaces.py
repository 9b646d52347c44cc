"""Continuous Lagrange P1/P2 spaces, boundary dof bookkeeping and constraints.

Node numbering is vertices first, then edge midpoints (P2 only).  Vector
spaces interleave components, so node ``i`` owns dofs ``2*i`` and ``2*i+1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ConfigurationError, UnsupportedGeometryError
from .mesh import GAMMA1, GAMMA2, Mesh


# --- reference element ------------------------------------------------------

def tabulate(degree: int, points: np.ndarray):
    """Basis values and barycentric derivative coefficients on the reference triangle.

    Parameters
    ----------
    degree : 1 or 2
    points : (q, 2) reference coordinates (ξ, η)

    Returns
    -------
    values : (q, nloc)
    dlam : (q, nloc, 3)
        ``∇N_a = Σ_k dlam[:, a, k] ∇λ_k`` with λ = (1-ξ-η, ξ, η).
    """
    points = np.atleast_2d(points)
    lam = np.column_stack([1.0 - points[:, 0] - points[:, 1], points[:, 0], points[:, 1]])
    q = len(points)
    if degree == 1:
        values = lam.copy()
        dlam = np.broadcast_to(np.eye(3), (q, 3, 3)).copy()
        return values, dlam
    if degree != 2:
        raise ConfigurationError(f"unsupported polynomial degree {degree}")
    values = np.empty((q, 6))
    dlam = np.zeros((q, 6, 3))
    for i in range(3):
        values[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        dlam[:, i, i] = 4.0 * lam[:, i] - 1.0
    for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        values[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        dlam[:, 3 + k, i] = 4.0 * lam[:, j]
        dlam[:, 3 + k, j] = 4.0 * lam[:, i]
    return values, dlam


def tabulate_edge(degree: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-D trace basis on an edge parametrised by t ∈ [0, 1].

    Local order is (start, end) for P1 and (start, end, midpoint) for P2.
    Returns values and d/dt derivatives, both of shape (q, nloc).
    """
    t = np.asarray(t, dtype=float)
    if degree == 1:
        return np.column_stack([1 - t, t]), np.column_stack([-np.ones_like(t), np.ones_like(t)])
    return (
        np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)]),
        np.column_stack([4 * t - 3, 4 * t - 1, 4 - 8 * t]),
    )


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """(M, 3, 2) gradients of the barycentric coordinates of every cell."""
    p = mesh.vertices[mesh.cells]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
    Jinv = np.linalg.inv(J)
    g1 = Jinv[:, 0, :]
    g2 = Jinv[:, 1, :]
    return np.stack([-g1 - g2, g1, g2], axis=1)


# --- spaces -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeSpace:
    """Lagrange space of a given degree and number of components on a mesh."""

    mesh: Mesh
    degree: int
    components: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ConfigurationError(f"degree must be 1 or 2, got {self.degree}")
        if self.components not in (1, 2):
            raise ConfigurationError(f"components must be 1 or 2, got {self.components}")

    @property
    def num_nodes(self) -> int:
        m = self.mesh
        return m.num_vertices + (m.num_edges if self.degree == 2 else 0)

    @property
    def ndofs(self) -> int:
        return self.components * self.num_nodes

    @property
    def nloc(self) -> int:
        return 3 if self.degree == 1 else 6

    @cached_property
    def node_points(self) -> np.ndarray:
        m = self.mesh
        if self.degree == 1:
            return m.vertices
        mids = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
        return np.vstack([m.vertices, mids])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(M, nloc) node indices in reference-element order."""
        m = self.mesh
        if self.degree == 1:
            return np.asarray(m.cells)
        return np.hstack([m.cells, m.num_vertices + m.cell_edges])

    @cached_property
    def dof_map(self) -> np.ndarray:
        """(M, nloc*components) global dofs; component index varies fastest."""
        if self.components == 1:
            return self.cell_nodes
        c = self.components
        return (c * self.cell_nodes[:, :, None] + np.arange(c)).reshape(len(self.cell_nodes), -1)

    def dofs_of_nodes(self, nodes: np.ndarray, component: int | None = None) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if self.components == 1:
            return nodes
        if component is not None:
            return self.components * nodes + component
        return (self.components * nodes[:, None] + np.arange(self.components)).ravel()

    @cached_property
    def dof_points(self) -> np.ndarray:
        return np.repeat(self.node_points, self.components, axis=0)

    def scalar(self) -> "FeSpace":
        """Scalar space of the same degree on the same mesh."""
        if self.components == 1:
            return self
        key = "scalar"
        if key not in self._cache:
            self._cache[key] = FeSpace(self.mesh, self.degree, 1)
        return self._cache[key]

    def edge_nodes(self, boundary_positions: np.ndarray) -> np.ndarray:
        """Nodes of boundary edges in trace order (start, end[, midpoint])."""
        m = self.mesh
        be = m.boundary_edges[boundary_positions]
        if self.degree == 1:
            return be
        return np.column_stack([be, m.num_vertices + m.boundary_edge_ids[boundary_positions]])

    def boundary_nodes(self, marker: int, closed: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Nodes on Γ_marker ordered by arclength along each boundary chain.

        With ``closed=False`` nodes that also lie on the other marker's
        closure (the Γ1/Γ2 junction corners) are dropped; these are the nodes
        whose basis functions vanish on the other boundary part.

        Returns
        -------
        nodes : (k,) int array
        arclength : (k,) float array, increasing; successive chains are
            offset so the coordinate stays monotone.
        """
        key = ("bnodes", marker, closed)
        if key in self._cache:
            return self._cache[key]
        m = self.mesh
        nodes: list[int] = []
        arc: list[float] = []
        offset = 0.0
        for chain in m.boundary_chains(marker):
            s = offset
            en = self.edge_nodes(np.array(chain, dtype=np.int64))
            for pos, row in zip(chain, en):
                L = m.boundary_lengths[pos]
                if not nodes or nodes[-1] != row[0]:
                    nodes.append(int(row[0]))
                    arc.append(s)
                if self.degree == 2:
                    nodes.append(int(row[2]))
                    arc.append(s + 0.5 * L)
                nodes.append(int(row[1]))
                arc.append(s + L)
                s += L
            offset = s + 1.0
        nodes_a = np.array(nodes, dtype=np.int64)
        arc_a = np.array(arc, dtype=float)
        # a closed loop repeats its first node at the end
        _, first = np.unique(nodes_a, return_index=True)
        keep = np.sort(first)
        nodes_a, arc_a = nodes_a[keep], arc_a[keep]
        if not closed:
            other = GAMMA2 if marker == GAMMA1 else GAMMA1
            other_pos = m.edges_with_marker(other)
            other_nodes = np.unique(self.edge_nodes(other_pos)) if len(other_pos) else []
            mask = ~np.isin(nodes_a, other_nodes)
            nodes_a, arc_a = nodes_a[mask], arc_a[mask]
        for a in (nodes_a, arc_a):
            a.setflags(write=False)
        self._cache[key] = (nodes_a, arc_a)
        return nodes_a, arc_a


def build_space(mesh: Mesh, degree: int, components: int = 1) -> FeSpace:
    return FeSpace(mesh, degree, components)


# --- constraints ------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintSet:
    """Essential constraints as (dof, value) pairs, sorted by dof.

    Tangential conditions u·τ = 0 on axis-aligned sides become single
    component pins, so every constraint has this one form.  ``kinds`` keeps
    the origin of each entry (``"dirichlet"`` or ``"tangential"``).
    """

    ndofs: int
    dofs: np.ndarray
    values: np.ndarray
    kinds: tuple[str, ...] = ()

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.dofs] = False
        return np.flatnonzero(mask)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Copy of ``x`` with the constrained entries overwritten."""
        y = np.array(x, dtype=float, copy=True)
        y[self.dofs] = self.values
        return y

    def __len__(self):
        return len(self.dofs)


def _merge(ndofs, entries):
    """Combine (dofs, values, kind) groups; earlier groups take precedence."""
    chosen: dict[int, tuple[float, str]] = {}
    for dofs, values, kind in entries:
        for d, v in zip(np.asarray(dofs).tolist(), np.asarray(values, dtype=float).tolist()):
            if d in chosen:
                prev_v, prev_kind = chosen[d]
                if prev_kind == kind and prev_v != v:
                    raise ConfigurationError(f"dof {d} constrained twice with different values")
                continue
            chosen[d] = (v, kind)
    order = sorted(chosen)
    return ConstraintSet(
        ndofs,
        np.array(order, dtype=np.int64),
        np.array([chosen[d][0] for d in order], dtype=float),
        tuple(chosen[d][1] for d in order),
    )


def _eval_scalar(f, x, y):
    return np.broadcast_to(np.asarray(f(x, y), dtype=float), np.shape(x)).copy()


CONSTRAINT_KINDS = ("velocity_noslip_gamma1", "H_space", "pressure_dirichlet_gamma2")


def essential_constraints(space: FeSpace, kind: str, pb: Callable | None = None) -> ConstraintSet:
    """Essential constraints for one of the three function spaces.

    ``velocity_noslip_gamma1``
        all vector dofs on the closure of Γ1 pinned to zero (H¹_{Γ1}).
    ``H_space``
        no-slip on Γ1 plus the tangential component pinned on each (axis
        aligned) Γ2 edge; Dirichlet values win at shared corners.
    ``pressure_dirichlet_gamma2``
        scalar dofs on the closure of Γ2 set to ``pb`` at the dof points.
    """
    m = space.mesh
    if kind == "pressure_dirichlet_gamma2":
        if space.components != 1:
            raise ConfigurationError("pressure Dirichlet data needs a scalar space")
        if pb is None:
            raise ConfigurationError("pressure Dirichlet constraints need p^b")
        nodes, _ = space.boundary_nodes(GAMMA2)
        pts = space.node_points[nodes]
        return _merge(space.ndofs, [(nodes, _eval_scalar(pb, pts[:, 0], pts[:, 1]), "dirichlet")])

    if kind not in CONSTRAINT_KINDS:
        raise ConfigurationError(f"unknown constraint kind {kind!r}")
    if space.components != 2:
        raise ConfigurationError(f"{kind} needs a vector space")
    g1_nodes, _ = space.boundary_nodes(GAMMA1) if len(m.edges_with_marker(GAMMA1)) else ([], None)
    noslip = space.dofs_of_nodes(np.asarray(g1_nodes, dtype=np.int64))
    groups = [(noslip, np.zeros(len(noslip)), "dirichlet")]
    if kind == "H_space":
        tang_dofs = []
        for pos in m.edges_with_marker(GAMMA2):
            a, b = m.boundary_edges[pos]
            d = m.vertices[b] - m.vertices[a]
            L = np.hypot(*d)
            if abs(d[0]) <= 1e-12 * L:
                comp = 1  # vertical side: tangent is ±e_y
            elif abs(d[1]) <= 1e-12 * L:
                comp = 0
            else:
                raise UnsupportedGeometryError(
                    f"Γ2 edge {(int(a), int(b))} is not axis-aligned; the tangential "
                    "condition is only supported on axis-aligned Γ2 sides"
                )
            nodes = space.edge_nodes(np.array([pos]))[0]
            tang_dofs.extend(space.dofs_of_nodes(nodes, comp).tolist())
        tang = np.unique(np.array(tang_dofs, dtype=np.int64))
        groups.append((tang, np.zeros(len(tang)), "tangential"))
    return _merge(space.ndofs, groups)


def interpolate(space: FeSpace, f: Callable) -> np.ndarray:
    """Nodal interpolant of ``f``.

    Scalar spaces expect ``f(x, y)`` to return an array like ``x``; vector
    spaces expect a pair ``(fx, fy)`` or an array of shape ``(2,) + x.shape``.
    """
    pts = space.node_points
    x, y = pts[:, 0], pts[:, 1]
    if space.components == 1:
        return _eval_scalar(f, x, y)
    val = f(x, y)
    out = np.empty(space.ndofs)
    out[0::2] = np.broadcast_to(np.asarray(val[0], dtype=float), x.shape)
    out[1::2] = np.broadcast_to(np.asarray(val[1], dtype=float), x.shape)
    return out
