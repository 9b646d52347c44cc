from math import factorial

import numpy as np
import pytest
import scipy.linalg as sla

from stokeslab.assembly import (
    FormKind,
    LoadKind,
    assemble_functional,
    assemble_matrix,
    edge_quadrature,
    triangle_quadrature,
)
from stokeslab.errors import ConfigurationError
from stokeslab.mesh import GAMMA1, GAMMA2, Mesh, generate_unit_square
from stokeslab.norms import traction_functional
from stokeslab.spaces import build_space, interpolate

SYMMETRIC = [FormKind.SYM_GRAD_HALF, FormKind.CURL_CURL, FormKind.GRAD_DIV,
             FormKind.GRAD_GRAD, FormKind.MASS]


def _space_for(kind, mesh):
    vector = kind in (FormKind.SYM_GRAD_HALF, FormKind.CURL_CURL, FormKind.GRAD_DIV,
                      FormKind.DIV_COUPLE)
    return build_space(mesh, 2, 2 if vector else 1)


@pytest.mark.parametrize("degree", [1, 2, 4, 6, 8])
def test_triangle_rule_integrates_monomials(degree):
    pts, w = triangle_quadrature(degree)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            exact = factorial(i) * factorial(j) / factorial(i + j + 2)
            assert abs(w @ (pts[:, 0] ** i * pts[:, 1] ** j) - exact) < 1e-14


def test_edge_rule_is_exact_to_degree_five():
    t, w = edge_quadrature(3)
    for k in range(6):
        assert abs(w @ t**k - 1 / (k + 1)) < 1e-15


def test_p1_mass_on_unit_right_triangle():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [GAMMA1, GAMMA2, GAMMA1])
    M = assemble_matrix(FormKind.MASS, build_space(m, 1)).toarray()
    expected = 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_rigid_motion_in_kernel_of_symmetric_gradient():
    V = build_space(generate_unit_square(3), 2, 2)
    a, b, c = 0.3, -1.2, 0.7
    u = interpolate(V, lambda x, y: (a - c * y, b + c * x))
    assert np.abs(assemble_matrix(FormKind.SYM_GRAD_HALF, V) @ u).max() < 1e-12


def test_symmetric_gradient_carries_the_half_factor():
    # u = (x, 0): D(u) = diag(1, 0), so ½∫D:D = ½ on the unit square
    V = build_space(generate_unit_square(2), 2, 2)
    u = interpolate(V, lambda x, y: (x, 0 * x))
    assert abs(u @ assemble_matrix(FormKind.SYM_GRAD_HALF, V) @ u - 0.5) < 1e-13


def test_curl_of_gradient_vanishes():
    V = build_space(generate_unit_square(3), 2, 2)
    u = interpolate(V, lambda x, y: (2 * x, 2 * y))
    assert abs(u @ assemble_matrix(FormKind.CURL_CURL, V) @ u) < 1e-12
    w = interpolate(V, lambda x, y: (-y, x))  # curl = 2
    assert abs(w @ assemble_matrix(FormKind.CURL_CURL, V) @ w - 4.0) < 1e-12


def test_grad_div_vanishes_on_divergence_free_fields():
    V = build_space(generate_unit_square(3), 2, 2)
    u = interpolate(V, lambda x, y: (y * (1 - y), x * x))
    assert abs(u @ assemble_matrix(FormKind.GRAD_DIV, V) @ u) < 1e-13


def test_divergence_coupling_of_shear_flow():
    m = generate_unit_square(4)
    V, Q = build_space(m, 2, 2), build_space(m, 1)
    u = interpolate(V, lambda x, y: (y, 0 * y))
    assert np.abs(assemble_matrix(FormKind.DIV_COUPLE, V, Q) @ u).max() < 1e-12
    D = assemble_matrix(FormKind.DIV_COUPLE, V, Q)
    assert D.shape == (Q.ndofs, V.ndofs)
    assert abs(assemble_matrix(FormKind.DIV_COUPLE, Q, V) - D.T).max() == 0


@pytest.mark.parametrize("kind", SYMMETRIC)
def test_symmetry(kind):
    A = assemble_matrix(kind, _space_for(kind, generate_unit_square(4)))
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_boundary_mass_symmetry():
    S = build_space(generate_unit_square(4), 2)
    A = assemble_matrix(FormKind.BOUNDARY_MASS, S, marker=GAMMA2)
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    assert abs(A.sum() - 2.0) < 1e-13


@pytest.mark.parametrize("n", [2, 4, 8])
@pytest.mark.parametrize("kind", [FormKind.SYM_GRAD_HALF, FormKind.CURL_CURL, FormKind.GRAD_GRAD])
def test_positive_semidefinite(kind, n):
    A = assemble_matrix(kind, _space_for(kind, generate_unit_square(n))).toarray()
    assert sla.eigvalsh(A)[0] >= -1e-10


@pytest.mark.parametrize("kind", SYMMETRIC + [FormKind.DIV_COUPLE])
def test_quadrature_doubling_changes_nothing(kind):
    m = generate_unit_square(3)
    trial = _space_for(kind, m)
    test = build_space(m, 1) if kind is FormKind.DIV_COUPLE else None
    a = assemble_matrix(kind, trial, test)
    b = assemble_matrix(kind, trial, test, quad_degree=8)
    assert abs(a - b).max() <= 1e-12 * abs(a).max()


def test_no_stored_zeros():
    A = assemble_matrix(FormKind.GRAD_GRAD, build_space(generate_unit_square(3), 2))
    assert np.all(A.data != 0)


def test_arity_checks():
    m = generate_unit_square(2)
    S, V = build_space(m, 1), build_space(m, 2, 2)
    with pytest.raises(ConfigurationError):
        assemble_matrix(FormKind.SYM_GRAD_HALF, S)
    with pytest.raises(ConfigurationError):
        assemble_matrix(FormKind.GRAD_GRAD, S, build_space(generate_unit_square(2), 1))
    with pytest.raises(ConfigurationError):
        assemble_matrix(FormKind.BOUNDARY_MASS, S)
    with pytest.raises(ConfigurationError):
        assemble_functional(LoadKind.DOMAIN_LOAD, S, lambda x, y: x)
    with pytest.raises(ConfigurationError):
        assemble_matrix(FormKind.DIV_COUPLE, V, V)


def test_zero_domain_load():
    V = build_space(generate_unit_square(3), 2, 2)
    b = assemble_functional(LoadKind.DOMAIN_LOAD, V, lambda x, y: (0 * x, 0 * y))
    assert not np.any(b)


def test_unit_neumann_pairing_measures_gamma1():
    Q = build_space(generate_unit_square(4), 1)
    b = assemble_functional(LoadKind.NEUMANN_PAIR, Q, lambda x, y: np.ones_like(x))
    assert abs(b @ np.ones(Q.ndofs) - 2.0) < 1e-12


def test_empty_marker_is_an_error():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [GAMMA1] * 3,
             require_both_markers=False)
    with pytest.raises(ConfigurationError):
        assemble_functional(LoadKind.TRACTION_PAIR, build_space(m, 2, 2), lambda x, y: (x, y))


def test_pressure_flux_pairs_with_outward_normal():
    V = build_space(generate_unit_square(2), 2, 2)
    b = assemble_functional(LoadKind.PRESSURE_FLUX, V, lambda x, y: np.ones_like(x))
    # ∫_Γ2 φ·ν with φ = (x, 0): x=1 side contributes 1, x=0 side contributes 0
    assert abs(b @ interpolate(V, lambda x, y: (x, 0 * x)) - 1.0) < 1e-13


def test_poiseuille_traction_matches_residual_traction(ms1):
    m = generate_unit_square(4)
    V, Q = build_space(m, 2, 2), build_space(m, 1)

    def t(x, y):
        left = np.isclose(x, 0.0)
        return (np.where(left, 0.5, 0.0), np.where(left, -1, 1) * (1 - 2 * y) / 4)

    assembled = assemble_functional(LoadKind.TRACTION_PAIR, V, t)
    u = interpolate(V, lambda x, y: (y * (1 - y), 0 * y))
    p = interpolate(Q, lambda x, y: (1 - x) / 2)
    residual = traction_functional(V, u, Q, p, lambda x, y: (0 * x, 0 * y))
    np.testing.assert_allclose(residual.values.ravel(),
                               assembled[V.dofs_of_nodes(residual.nodes)], atol=1e-10)
