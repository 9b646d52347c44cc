import math

import numpy as np
import pytest
import scipy.sparse as sp

from stokeslab.assembly import FormKind, assemble_matrix
from stokeslab.errors import (
    ConfigurationError,
    IllPosedError,
    SingularMatrixError,
    UnsupportedGeometryError,
)
from stokeslab.mesh import GAMMA1, GAMMA2, Mesh, generate_unit_square
from stokeslab.norms import boundary_l2_error, h1_norm, l2_norm
from stokeslab.solvers import (
    Factorization,
    ProblemData,
    factor_solve,
    solve,
    solve_PP,
    solve_S1,
    solve_S2,
    zero_scalar,
    zero_vector,
)
from stokeslab.spaces import essential_constraints
from stokeslab.verify import solution_errors, solve_case

ZERO = ProblemData(force=zero_vector, div_force=zero_scalar, traction=zero_vector,
                   neumann=zero_scalar, pressure_bc=zero_scalar)


# --- factorization ----------------------------------------------------------

def test_identity_system():
    b = np.array([1.0, -2.0, 3.5])
    np.testing.assert_array_equal(factor_solve(sp.identity(3), b), b)


def test_tridiagonal_poisson():
    # (1/h²) tridiag(−1, 2, −1) x = 1 with h = 1/4; the second difference is
    # exact on quadratics, so x_i = x(1 − x)/2 at x = 1/4, 1/2, 3/4.
    h = 0.25
    A = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(3, 3)) / h**2
    np.testing.assert_allclose(factor_solve(A, np.ones(3)), [3 / 32, 1 / 8, 3 / 32], rtol=1e-14)


def test_zero_row_is_singular():
    A = sp.csc_matrix(np.array([[1.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(SingularMatrixError):
        factor_solve(A, np.ones(2))


def test_non_square_rejected():
    with pytest.raises(ConfigurationError):
        Factorization(sp.csc_matrix(np.ones((2, 3))))


def test_factorization_is_deterministic(rng):
    A = sp.random(40, 40, density=0.2, random_state=1) + 10 * sp.identity(40)
    b = rng.standard_normal(40)
    np.testing.assert_array_equal(factor_solve(A, b), factor_solve(A, b))


# --- Poiseuille exactness ---------------------------------------------------

@pytest.mark.parametrize("problem", ["S1", "S2", "PP"])
def test_poiseuille_is_reproduced(ms1, problem):
    sol = solve_case(ms1, problem, 4)
    err = solution_errors(ms1, sol)
    assert err["err_u_h1"] < 1e-8 and err["err_p_l2"] < 1e-8
    assert sol.diagnostics["residual"] <= 1e-10


def test_s1_and_pp_agree_on_poiseuille(ms1):
    a, b = solve_case(ms1, "S1", 4), solve_case(ms1, "PP", 4)
    assert h1_norm(a.velocity_space, a.velocity - b.velocity) < 1e-8
    assert h1_norm(a.pressure_space, a.pressure - b.pressure) < 1e-8


def test_essential_constraints_hold_exactly(ms2):
    for problem, kind in (("S1", "velocity_noslip_gamma1"), ("S2", "H_space")):
        sol = solve_case(ms2, problem, 4)
        cons = essential_constraints(sol.velocity_space, kind)
        np.testing.assert_array_equal(sol.velocity[cons.dofs], cons.values)


@pytest.mark.parametrize("problem", ["S1", "S2"])
def test_discrete_divergence_free(ms2, problem):
    sol = solve_case(ms2, problem, 4)
    D = assemble_matrix(FormKind.DIV_COUPLE, sol.velocity_space, sol.pressure_space)
    assert np.abs(D @ sol.velocity).max() <= 1e-9


# --- trivial data -----------------------------------------------------------

@pytest.mark.parametrize("solver", [solve_S1, solve_S2, solve_PP])
def test_zero_data_gives_zero_solution(solver):
    sol = solver(generate_unit_square(3), ZERO)
    assert np.abs(sol.velocity).max() < 1e-14 and np.abs(sol.pressure).max() < 1e-14


def test_s2_constant_pressure_data():
    c = 2.5
    data = ProblemData(force=zero_vector, pressure_bc=lambda x, y: c + 0 * x)
    sol = solve_S2(generate_unit_square(2), data)
    assert np.abs(sol.velocity).max() < 1e-12
    np.testing.assert_allclose(sol.pressure, c, atol=1e-12)


def test_pp_with_zero_pressure_data_is_a_traction_problem():
    t = lambda x, y: (np.sin(y), 0 * y)
    data = ProblemData(force=zero_vector, div_force=zero_scalar, traction=t,
                       neumann=zero_scalar, pressure_bc=zero_scalar)
    sol = solve_PP(generate_unit_square(3), data)
    assert np.abs(sol.pressure).max() == 0.0
    assert h1_norm(sol.velocity_space, sol.velocity) > 0.01


def test_pp_pressure_shift_is_linear(ms1):
    m = generate_unit_square(4)
    base = ms1.data()
    ref = solve_S1(m, base).pressure
    diffs = []
    for eps in (1e-2, 1e-1):
        g = lambda x, y, e=eps: e + 0 * x
        sol = solve_PP(m, ProblemData(**{**base.__dict__, "neumann": g}))
        diffs.append(l2_norm(sol.pressure_space, sol.pressure - ref) / eps)
    assert diffs[0] > 0 and abs(diffs[0] / diffs[1] - 1) < 1e-8


def test_affinity(ms2):
    m = generate_unit_square(3)
    d1 = ms2.data()
    d2 = ProblemData(force=lambda x, y: (np.cos(x), x * y), div_force=lambda x, y: -np.sin(x) + x,
                     traction=lambda x, y: (y, 1 + 0 * x), neumann=lambda x, y: x,
                     pressure_bc=lambda x, y: y * y)
    both = ProblemData(**{k: (lambda f, g: lambda x, y: np.asarray(f(x, y)) + np.asarray(g(x, y)))(
        getattr(d1, k), getattr(d2, k)) for k in d1.__dict__})
    for solver in (solve_S1, solve_PP):
        s12, s1, s2, s0 = (solver(m, d) for d in (both, d1, d2, ZERO))
        combo = s12.velocity - s1.velocity - s2.velocity + s0.velocity
        assert np.abs(combo).max() < 1e-9
        combo = s12.pressure - s1.pressure - s2.pressure + s0.pressure
        assert np.abs(combo).max() < 1e-9


# --- error paths ------------------------------------------------------------

def _all_gamma1_mesh():
    return Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]],
                [[0, 1], [1, 2], [2, 3], [3, 0]], [GAMMA1] * 4, require_both_markers=False)


@pytest.mark.parametrize("solver", [solve_S1, solve_S2, solve_PP])
def test_empty_gamma2_is_ill_posed(solver):
    with pytest.raises(IllPosedError, match="Γ2"):
        solver(_all_gamma1_mesh(), ZERO)


def test_missing_data_fields():
    with pytest.raises(ConfigurationError, match="traction"):
        solve_S1(generate_unit_square(2), ProblemData(force=zero_vector))
    with pytest.raises(ConfigurationError):
        solve_PP(generate_unit_square(2), ProblemData(force=zero_vector, traction=zero_vector))
    with pytest.raises(ConfigurationError):
        solve("S3", generate_unit_square(2), ZERO)


def test_s2_rejects_slanted_gamma2():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]],
             [GAMMA1, GAMMA2, GAMMA1])
    with pytest.raises(UnsupportedGeometryError):
        solve_S2(m, ZERO)


def test_bare_curl_form_loses_stability_under_refinement(ms1):
    """Without the grad-div term Taylor-Hood admits curl-free, weakly
    divergence-free velocity modes once the mesh is fine enough."""
    ok = solve_case(ms1, "S2", 4, grad_div=0.0)
    assert solution_errors(ms1, ok)["err_u_h1"] < 1e-8
    with pytest.raises(IllPosedError, match="stability"):
        solve_case(ms1, "S2", 8, grad_div=0.0)
    with pytest.raises(ConfigurationError):
        solve_case(ms1, "S2", 4, grad_div=-1.0)


def test_s2_boundary_pressure_converges(ms2):
    errs = []
    for n in (4, 8, 16):
        sol = solve_case(ms2, "S2", n)
        errs.append(boundary_l2_error(sol.pressure_space, sol.pressure,
                                      ms2.exact_pressure("s2"), GAMMA2))
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) >= 1.5, rates


def test_vertex_fields_shapes(ms1):
    sol = solve_case(ms1, "S1", 2)
    (nu, u), (np_, p) = sol.vertex_fields()
    assert u.shape == (9, 2) and p.shape == (9,)
    assert nu == "velocity_S1" and np_ == "pressure_S1"
