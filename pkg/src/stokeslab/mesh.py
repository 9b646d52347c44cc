"""Conforming triangle meshes with a two-part boundary Γ = Γ1 ∪ Γ2."""
from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

GAMMA1 = 1
GAMMA2 = 2

_SIDES = ("bottom", "right", "top", "left")

_NAMED_LAYOUTS = {
    "pipe": dict(bottom=GAMMA1, top=GAMMA1, left=GAMMA2, right=GAMMA2),
    "outlet-right": dict(bottom=GAMMA1, top=GAMMA1, left=GAMMA1, right=GAMMA2),
    "inlet-left": dict(bottom=GAMMA1, top=GAMMA1, left=GAMMA2, right=GAMMA1),
    "all-gamma1": dict(bottom=GAMMA1, top=GAMMA1, left=GAMMA1, right=GAMMA1),
    "all-gamma2": dict(bottom=GAMMA2, top=GAMMA2, left=GAMMA2, right=GAMMA2),
}


@dataclass(frozen=True)
class BcLayout:
    """Marker assigned to each side of the unit square."""

    bottom: int = GAMMA1
    right: int = GAMMA2
    top: int = GAMMA1
    left: int = GAMMA2

    def __post_init__(self):
        for side in _SIDES:
            if getattr(self, side) not in (GAMMA1, GAMMA2):
                raise ConfigurationError(
                    f"side {side!r} has marker {getattr(self, side)!r}; expected 1 or 2"
                )

    @classmethod
    def parse(cls, text: str) -> "BcLayout":
        """Build a layout from a preset name or ``side=marker`` pairs.

        ``"pipe"`` and ``"bottom=1,top=1,left=2,right=2"`` are equivalent.
        """
        text = text.strip()
        if text in _NAMED_LAYOUTS:
            return cls(**_NAMED_LAYOUTS[text])
        values = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, sep, val = item.partition("=")
            key = key.strip()
            if not sep or key not in _SIDES:
                raise ConfigurationError(
                    f"cannot parse layout {text!r}; use one of "
                    f"{sorted(_NAMED_LAYOUTS)} or side=marker pairs"
                )
            try:
                values[key] = int(val)
            except ValueError:
                raise ConfigurationError(f"bad marker {val!r} for side {key!r}") from None
        if not values:
            raise ConfigurationError("empty layout")
        return cls(**values)

    def markers(self) -> dict[str, int]:
        return {side: getattr(self, side) for side in _SIDES}

    def validate(self) -> None:
        used = set(self.markers().values())
        if GAMMA1 not in used:
            raise ConfigurationError("layout leaves Γ1 empty (|Γ1| > 0 is required)")
        if GAMMA2 not in used:
            raise ConfigurationError("layout leaves Γ2 empty (|Γ2| > 0 is required)")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2-D triangle mesh.

    Attributes
    ----------
    vertices : (V, 2) float array
    cells : (M, 3) int array, counter-clockwise
    boundary_edges : (K, 2) int array, oriented with the domain on the left
    boundary_markers : (K,) int array with values in {GAMMA1, GAMMA2}
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    require_both_markers: bool = True

    def __post_init__(self):
        object.__setattr__(self, "vertices", _freeze(np.asarray(self.vertices, dtype=float)))
        object.__setattr__(self, "cells", _freeze(np.asarray(self.cells, dtype=np.int64)))
        object.__setattr__(
            self, "boundary_edges", _freeze(np.asarray(self.boundary_edges, dtype=np.int64))
        )
        object.__setattr__(
            self, "boundary_markers", _freeze(np.asarray(self.boundary_markers, dtype=np.int64))
        )
        self._check()

    def _check(self):
        V = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ConfigurationError("vertices must have shape (V, 2)")
        if self.cells.ndim != 2 or self.cells.shape[1] != 3:
            raise ConfigurationError("cells must have shape (M, 3)")
        if self.cells.min() < 0 or self.cells.max() >= V:
            raise ConfigurationError("cell refers to a missing vertex")
        if len(np.unique(self.cells)) != V:
            raise ConfigurationError("mesh has unused vertices")
        if np.any(self.cell_areas <= 0.0):
            raise ConfigurationError("cells must have strictly positive signed area")
        if self.edge_cell_count.max() > 2:
            raise ConfigurationError("non-manifold edge shared by more than two cells")
        # a hanging vertex would leave interior edges with one cell

        one_cell = self.edges[self.edge_cell_count == 1]
        given = np.sort(self.boundary_edges, axis=1)
        if len(given) != len(one_cell) or not np.array_equal(
            np.unique(given, axis=0), np.unique(one_cell, axis=0)
        ):
            raise ConfigurationError("boundary edges differ from the edges with one cell")
        if not np.all(np.isin(self.boundary_markers, (GAMMA1, GAMMA2))):
            raise ConfigurationError("boundary markers must be 1 or 2")
        if self.require_both_markers:
            present = set(np.unique(self.boundary_markers).tolist())
            for m in (GAMMA1, GAMMA2):
                if m not in present:
                    raise ConfigurationError(f"no boundary edge carries marker Γ{m}")

    # --- connectivity -------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _freeze(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @cached_property
    def _edge_data(self):
        # local edge k joins local vertices (k, k+1 mod 3)
        local = np.array([[0, 1], [1, 2], [2, 0]])
        all_edges = self.cells[:, local].reshape(-1, 2)
        keys = np.sort(all_edges, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        cell_edges = inverse.reshape(-1, 3)
        edge_cells = -np.ones((len(edges), 2), dtype=np.int64)
        count = np.zeros(len(edges), dtype=np.int64)
        for flat, e in enumerate(inverse):
            c = flat // 3
            if count[e] < 2:
                edge_cells[e, count[e]] = c
            count[e] += 1
        return _freeze(edges), _freeze(cell_edges), _freeze(edge_cells), _freeze(count)

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) unique edges with sorted endpoints, lexicographic order."""
        return self._edge_data[0]

    @property
    def cell_edges(self) -> np.ndarray:
        """(M, 3) edge index of local edges (0,1), (1,2), (2,0)."""
        return self._edge_data[1]

    @property
    def edge_cells(self) -> np.ndarray:
        """(E, 2) incident cells; -1 marks a missing neighbour."""
        return self._edge_data[2]

    @property
    def edge_cell_count(self) -> np.ndarray:
        return self._edge_data[3]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edge_ids(self) -> np.ndarray:
        """Index into :attr:`edges` of each boundary edge."""
        lookup = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        ids = [lookup[tuple(sorted(e))] for e in self.boundary_edges.tolist()]
        return _freeze(np.array(ids, dtype=np.int64))

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        """Outward unit normal of every boundary edge."""
        t = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        return _freeze(n / np.linalg.norm(n, axis=1)[:, None])

    @cached_property
    def boundary_lengths(self) -> np.ndarray:
        t = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return _freeze(np.linalg.norm(t, axis=1))

    def edges_with_marker(self, marker: int) -> np.ndarray:
        """Positions (into ``boundary_edges``) of the edges carrying ``marker``."""
        return np.flatnonzero(self.boundary_markers == marker)

    def marker_length(self, marker: int) -> float:
        return float(self.boundary_lengths[self.edges_with_marker(marker)].sum())

    def boundary_chains(self, marker: int) -> list[list[int]]:
        """Boundary edges of one marker grouped into connected, ordered chains.

        Each chain is a list of positions into ``boundary_edges`` such that
        consecutive edges share a vertex.  Chains start at the lowest-index
        free end, which makes the ordering reproducible.
        """
        ids = self.edges_with_marker(marker)
        start_of = {int(self.boundary_edges[i, 0]): int(i) for i in ids}
        ends = {int(self.boundary_edges[i, 1]) for i in ids}
        starts = sorted(v for v in start_of if v not in ends)
        seen: set[int] = set()
        chains = []

        def walk(v):
            chain = []
            while v in start_of and start_of[v] not in seen:
                i = start_of[v]
                seen.add(i)
                chain.append(i)
                v = int(self.boundary_edges[i, 1])
            return chain

        for v in starts:
            chains.append(walk(v))
        # closed loops have no free end
        for v in sorted(start_of):
            if start_of[v] not in seen:
                chains.append(walk(v))
        return chains

    def total_boundary_length(self) -> float:
        return float(self.boundary_lengths.sum())

    # --- text format --------------------------------------------------------

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("mesh2d v1\n")
        out.write(f"vertices {self.num_vertices}\n")
        for x, y in self.vertices.tolist():
            out.write(f"{x!r} {y!r}\n")
        out.write(f"cells {self.num_cells}\n")
        for i, j, k in self.cells.tolist():
            out.write(f"{i} {j} {k}\n")
        out.write(f"boundary {len(self.boundary_edges)}\n")
        for (i, j), m in zip(self.boundary_edges.tolist(), self.boundary_markers.tolist()):
            out.write(f"{i} {j} {m}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Mesh":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != "mesh2d v1":
            raise ConfigurationError("missing 'mesh2d v1' header")
        pos = 1

        def section(name, width, conv):
            nonlocal pos
            head = lines[pos].split()
            if len(head) != 2 or head[0] != name:
                raise ConfigurationError(f"expected section {name!r}, got {lines[pos]!r}")
            count = int(head[1])
            rows = [lines[pos + 1 + r].split() for r in range(count)]
            if any(len(r) != width for r in rows):
                raise ConfigurationError(f"malformed row in section {name!r}")
            pos += 1 + count
            return [[conv(v) for v in r] for r in rows]

        try:
            verts = section("vertices", 2, float)
            cells = section("cells", 3, int)
            bnd = section("boundary", 3, int)
        except IndexError:
            raise ConfigurationError("truncated mesh file") from None
        bnd = np.array(bnd, dtype=np.int64).reshape(-1, 3)
        return cls(
            np.array(verts, dtype=float).reshape(-1, 2),
            np.array(cells, dtype=np.int64).reshape(-1, 3),
            bnd[:, :2],
            bnd[:, 2],
        )


def _side_of(midpoints: np.ndarray, tol: float = 1e-12) -> list[str]:
    sides = []
    for x, y in midpoints:
        if abs(y) < tol:
            sides.append("bottom")
        elif abs(x - 1.0) < tol:
            sides.append("right")
        elif abs(y - 1.0) < tol:
            sides.append("top")
        elif abs(x) < tol:
            sides.append("left")
        else:
            raise ConfigurationError(f"boundary edge at {(x, y)} is not on the unit square")
    return sides


def generate_unit_square(n: int, layout: BcLayout | str = "pipe") -> Mesh:
    """Structured mesh of (0,1)² with 2n² right-diagonal triangles.

    Vertex ``j*(n+1) + i`` sits at ``(i/n, j/n)``; each square is split along
    the diagonal from its lower-left to its upper-right corner.
    """
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise ConfigurationError(f"n must be a positive integer, got {n!r}")
    if isinstance(layout, str):
        layout = BcLayout.parse(layout)
    layout.validate()
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.divmod(np.arange(n * n), n)
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])

    k = np.arange(n)
    bottom = np.column_stack([k, k + 1])
    right = np.column_stack([k * (n + 1) + n, (k + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + n - k, n * (n + 1) + n - k - 1])
    left = np.column_stack([(n - k) * (n + 1), (n - k - 1) * (n + 1)])
    edges = np.vstack([bottom, right, top, left])
    markers = np.concatenate([np.full(n, getattr(layout, s)) for s in _SIDES])
    return Mesh(vertices, cells, edges, markers)


def refine_uniform(m: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints.

    Midpoint of edge ``e`` becomes vertex ``V + e``; boundary markers are
    inherited by both halves of a split edge.
    """
    V = m.num_vertices
    mids = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    vertices = np.vstack([m.vertices, mids])
    a, b, c = m.cells.T
    m01, m12, m20 = (V + m.cell_edges).T
    cells = np.empty((4 * m.num_cells, 3), dtype=np.int64)
    cells[0::4] = np.column_stack([a, m01, m20])
    cells[1::4] = np.column_stack([m01, b, m12])
    cells[2::4] = np.column_stack([m20, m12, c])
    cells[3::4] = np.column_stack([m01, m12, m20])
    bmid = V + m.boundary_edge_ids
    be = np.empty((2 * len(m.boundary_edges), 2), dtype=np.int64)
    be[0::2] = np.column_stack([m.boundary_edges[:, 0], bmid])
    be[1::2] = np.column_stack([bmid, m.boundary_edges[:, 1]])
    markers = np.repeat(m.boundary_markers, 2)
    return Mesh(vertices, cells, be, markers, require_both_markers=m.require_both_markers)


def write_vtk(m: Mesh, fields: Iterable = (), title: str = "stokeslab") -> bytes:
    """Legacy ASCII VTK (version 2.0) unstructured grid.

    ``fields`` holds ``(name, values)`` pairs with one value (scalar) or two
    values (vector) per mesh vertex, or objects with a ``vertex_fields()``
    method returning such pairs.
    """
    pairs: list[tuple[str, np.ndarray]] = []
    for f in fields:
        if hasattr(f, "vertex_fields"):
            pairs.extend(f.vertex_fields())
        else:
            name, values = f
            pairs.append((name, np.asarray(values, dtype=float)))

    V = m.num_vertices
    out = io.StringIO()
    out.write("# vtk DataFile Version 2.0\n")
    out.write(f"{title}\n")
    out.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {V} double\n")
    for x, y in m.vertices.tolist():
        out.write(f"{x!r} {y!r} 0.0\n")
    out.write(f"CELLS {m.num_cells} {4 * m.num_cells}\n")
    for i, j, k in m.cells.tolist():
        out.write(f"3 {i} {j} {k}\n")
    out.write(f"CELL_TYPES {m.num_cells}\n")
    out.write("5\n" * m.num_cells)
    if pairs:
        out.write(f"POINT_DATA {V}\n")
    for name, values in pairs:
        name = name.replace(" ", "_")
        if values.shape == (V,):
            out.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in values.tolist():
                out.write(f"{v!r}\n")
        elif values.shape == (V, 2):
            out.write(f"VECTORS {name} double\n")
            for vx, vy in values.tolist():
                out.write(f"{vx!r} {vy!r} 0.0\n")
        else:
            raise ConfigurationError(
                f"field {name!r} has shape {values.shape}; expected ({V},) or ({V}, 2)"
            )
    return out.getvalue().encode("ascii")


def read_vtk_counts(data: bytes) -> tuple[int, int]:
    """Return ``(points, cells)`` declared in a legacy VTK stream."""
    points = cells = -1
    for line in data.decode("ascii").splitlines():
        parts = line.split()
        if parts[:1] == ["POINTS"]:
            points = int(parts[1])
        elif parts[:1] == ["CELLS"]:
            cells = int(parts[1])
    return points, cells


def unit_square_side_normal(x, y, tol: float = 1e-12) -> np.ndarray:
    """Outward normal of the unit square evaluated at boundary points.

    Returns an array of shape ``(2,) + x.shape``; corners take the normal of
    the bottom or top side.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    nx = np.select([np.abs(y) < tol, np.abs(y - 1) < tol, np.abs(x) < tol, np.abs(x - 1) < tol],
                   [0.0, 0.0, -1.0, 1.0], default=np.nan)
    ny = np.select([np.abs(y) < tol, np.abs(y - 1) < tol, np.abs(x) < tol, np.abs(x - 1) < tol],
                   [-1.0, 1.0, 0.0, 0.0], default=np.nan)
    return np.stack([nx, ny])


__all__: Sequence[str] = [
    "GAMMA1",
    "GAMMA2",
    "BcLayout",
    "Mesh",
    "generate_unit_square",
    "refine_uniform",
    "write_vtk",
    "read_vtk_counts",
    "unit_square_side_normal",
]
