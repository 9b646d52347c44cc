import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokeslab.assembly import triangle_quadrature
from stokeslab.errors import UnsupportedGeometryError
from stokeslab.mesh import GAMMA1, GAMMA2, Mesh, generate_unit_square
from stokeslab.norms import error_norms
from stokeslab.spaces import build_space, essential_constraints, interpolate, tabulate


@pytest.mark.parametrize("degree,components,expected", [(1, 1, 4), (2, 1, 9), (2, 2, 18)])
def test_dof_counts_single_square(degree, components, expected):
    assert build_space(generate_unit_square(1), degree, components).ndofs == expected


def test_dof_count_formula():
    m = generate_unit_square(5)
    assert build_space(m, 1).ndofs == m.num_vertices
    assert build_space(m, 2, 2).ndofs == 2 * (m.num_vertices + m.num_edges)


@pytest.mark.parametrize("degree", [1, 2])
def test_partition_of_unity(degree):
    pts, _ = triangle_quadrature(6)
    vals, _ = tabulate(degree, pts)
    np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-13)


def test_boundary_nodes_sorted_by_arclength():
    S = build_space(generate_unit_square(4), 2)
    for marker in (GAMMA1, GAMMA2):
        nodes, s = S.boundary_nodes(marker)
        assert len(nodes) == len(s) == len(np.unique(nodes))
        assert np.all(np.diff(s) > 0)
        # consecutive nodes along a side are a half cell apart for P2
        steps = np.diff(s)
        assert np.allclose(steps[steps < 0.5], 0.125)
    nodes, _ = S.boundary_nodes(GAMMA1)
    assert len(nodes) == 2 * (2 * 4 + 1)


def test_boundary_node_order_is_stable():
    a = build_space(generate_unit_square(4), 2).boundary_nodes(GAMMA2)[0]
    b = build_space(generate_unit_square(4), 2).boundary_nodes(GAMMA2)[0]
    np.testing.assert_array_equal(a, b)


def test_open_boundary_nodes_drop_junctions():
    S = build_space(generate_unit_square(4), 1)
    closed, _ = S.boundary_nodes(GAMMA1, closed=True)
    opened, _ = S.boundary_nodes(GAMMA1, closed=False)
    assert len(closed) - len(opened) == 4
    assert not np.any(np.isclose(S.node_points[opened, 0], 0) | np.isclose(S.node_points[opened, 0], 1))


def test_tangential_pinning_on_vertical_gamma2():
    V = build_space(generate_unit_square(2), 2, 2)
    cons = essential_constraints(V, "H_space")
    pinned = set(cons.dofs.tolist())
    pts = V.node_points
    for node, (x, y) in enumerate(pts):
        on_side = np.isclose(x, 0) or np.isclose(x, 1)
        on_gamma1 = np.isclose(y, 0) or np.isclose(y, 1)
        if on_gamma1:
            assert {2 * node, 2 * node + 1} <= pinned
        elif on_side:
            assert 2 * node + 1 in pinned and 2 * node not in pinned
        else:
            assert 2 * node not in pinned and 2 * node + 1 not in pinned


def test_corner_dirichlet_precedence():
    V = build_space(generate_unit_square(2), 2, 2)
    cons = essential_constraints(V, "H_space")
    x = cons.apply(np.full(V.ndofs, 7.0))
    corner = int(np.flatnonzero(np.all(np.isclose(V.node_points, 0.0), axis=1))[0])
    assert x[2 * corner] == 0.0 and x[2 * corner + 1] == 0.0
    assert len(np.unique(cons.dofs)) == len(cons.dofs)


def test_pressure_dirichlet_value():
    Q = build_space(generate_unit_square(2), 1)
    cons = essential_constraints(Q, "pressure_dirichlet_gamma2", lambda x, y: 2 * (1 - x))
    node = int(np.flatnonzero(np.all(np.isclose(Q.node_points, [0.0, 0.5]), axis=1))[0])
    assert cons.values[list(cons.dofs).index(node)] == 2.0
    corners = np.flatnonzero(np.isclose(Q.node_points[:, 0], 0) | np.isclose(Q.node_points[:, 0], 1))
    assert set(corners.tolist()) == set(cons.dofs.tolist())


def test_constraint_application_is_idempotent(rng):
    V = build_space(generate_unit_square(3), 2, 2)
    cons = essential_constraints(V, "velocity_noslip_gamma1")
    x = cons.apply(rng.standard_normal(V.ndofs))
    np.testing.assert_array_equal(cons.apply(x.copy()), x)


def test_slanted_gamma2_is_unsupported():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [GAMMA1, GAMMA2, GAMMA1])
    with pytest.raises(UnsupportedGeometryError):
        essential_constraints(build_space(m, 2, 2), "H_space")


def test_interpolate_constant_and_coordinate():
    m = generate_unit_square(3)
    np.testing.assert_array_equal(interpolate(build_space(m, 1), lambda x, y: np.ones_like(x)), 1.0)
    S = build_space(m, 2)
    np.testing.assert_array_equal(interpolate(S, lambda x, y: x), S.node_points[:, 0])


def test_interpolated_quadratic_has_zero_error():
    S = build_space(generate_unit_square(3), 2)
    f = lambda x, y: y * (1 - y)
    c = interpolate(S, f)
    l2, h1 = error_norms(S, c, f, lambda x, y: np.stack([0 * x, 1 - 2 * y]))
    assert h1 < 1e-12 and l2 < 1e-12


@settings(max_examples=20, deadline=None)
@given(coef=st.lists(st.floats(-3, 3), min_size=6, max_size=6), n=st.integers(1, 4))
def test_interpolation_reproduces_quadratics(coef, n):
    a, b, c, d, e, f = coef
    S = build_space(generate_unit_square(n), 2)
    func = lambda x, y: a + b * x + c * y + d * x * x + e * x * y + f * y * y
    grad = lambda x, y: np.stack([b + 2 * d * x + e * y, c + e * x + 2 * f * y])
    _, h1 = error_norms(S, interpolate(S, func), func, grad)
    assert h1 < 1e-11
