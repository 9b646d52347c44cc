"""Manufactured solutions, convergence studies and estimate verification.

Data for each manufactured pair (u*, p*) are produced symbolically with
sympy from the operators the discrete forms actually implement:

* traction family (S1 and PP):  F = −¼(Δu + ∇div u) + ∇p,  t = ½D(u)ν − pν
* curl family (S2):             F = curl curl u + ∇p
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import sympy

from .assembly import FormKind, assemble_matrix
from .errors import ConfigurationError
from .mesh import GAMMA1, GAMMA2, BcLayout, Mesh, generate_unit_square, unit_square_side_normal
from .norms import (
    error_norms,
    h1_norm,
    h_half_norm,
    h_minus_half_norm,
    neumann_functional,
    pressure_flux_functional,
    trace_spectrum,
    traction_functional,
    traction_pair_functional,
)
from .solvers import S2_GRAD_DIV, FieldSolution, ProblemData, solve_PP, solve_S1, solve_S2
from .spaces import build_space, essential_constraints, interpolate

MAX_CONSTANT_DOFS = 5000

_x, _y = sympy.symbols("x y", real=True)


def worker_count() -> int:
    """Worker threads for parameter sweeps, capped by ``STOKESLAB_THREADS``."""
    try:
        return max(1, int(os.environ.get("STOKESLAB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# --- manufactured solutions -------------------------------------------------

def _lambdify(expr) -> Callable:
    f = sympy.lambdify((_x, _y), expr, "numpy")

    def wrapped(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(f(x, y), dtype=float), np.broadcast(x, y).shape).copy()

    return wrapped


def _lambdify_vec(exprs) -> Callable:
    parts = [_lambdify(e) for e in exprs]

    def wrapped(x, y):
        return np.stack([p(x, y) for p in parts])

    return wrapped


def _grad(f):
    return [sympy.diff(f, _x), sympy.diff(f, _y)]


def _lap(f):
    return sympy.diff(f, _x, 2) + sympy.diff(f, _y, 2)


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form velocity with one pressure per problem family.

    ``pressure`` pairs with the traction-form operator (S1/PP), and
    ``pressure_s2`` with the curl-form operator (S2).
    """

    name: str
    velocity: tuple
    pressure: sympy.Expr
    pressure_s2: sympy.Expr
    layout: BcLayout = field(default_factory=BcLayout)

    # symbolic pieces ---------------------------------------------------------

    @cached_property
    def div_velocity(self):
        u1, u2 = self.velocity
        return sympy.simplify(sympy.diff(u1, _x) + sympy.diff(u2, _y))

    def force_expr(self, family: str):
        u1, u2 = self.velocity
        if family == "s1":
            p = self.pressure
            div = sympy.diff(u1, _x) + sympy.diff(u2, _y)
            gd = _grad(div)
            return [sympy.simplify(-sympy.Rational(1, 4) * (_lap(u) + g) + dp)
                    for u, g, dp in zip((u1, u2), gd, _grad(p))]
        if family == "s2":
            p = self.pressure_s2
            w = sympy.diff(u2, _x) - sympy.diff(u1, _y)
            rot = [sympy.diff(w, _y), -sympy.diff(w, _x)]
            return [sympy.simplify(r + dp) for r, dp in zip(rot, _grad(p))]
        raise ConfigurationError(f"unknown family {family!r}")

    def traction_force_for(self, family: str):
        """Body force of the traction-form operator paired with a family's pressure."""
        other = replace(self, pressure=self.pressure_s2) if family == "s2" else self
        return other.force_expr("s1")

    def _pressure(self, family: str):
        return self.pressure_s2 if family == "s2" else self.pressure

    # callables ------------------------------------------------------------------

    def exact_velocity(self) -> Callable:
        return _lambdify_vec(self.velocity)

    def exact_velocity_grad(self) -> Callable:
        g = _lambdify_vec([d for u in self.velocity for d in _grad(u)])
        return lambda x, y: g(x, y).reshape((2, 2) + np.shape(x))

    def exact_pressure(self, family: str = "s1") -> Callable:
        return _lambdify(self._pressure(family))

    def exact_pressure_grad(self, family: str = "s1") -> Callable:
        return _lambdify_vec(_grad(self._pressure(family)))

    def _traction(self, family: str) -> Callable:
        u1, u2 = self.velocity
        D = [[sympy.diff(u1, _x), (sympy.diff(u1, _y) + sympy.diff(u2, _x)) / 2],
             [(sympy.diff(u1, _y) + sympy.diff(u2, _x)) / 2, sympy.diff(u2, _y)]]
        Df = _lambdify_vec([D[0][0], D[0][1], D[1][0], D[1][1]])
        p = self.exact_pressure(family)

        def t(x, y):
            n = unit_square_side_normal(x, y)
            d = Df(x, y)
            q = p(x, y)
            return np.stack([0.5 * (d[0] * n[0] + d[1] * n[1]) - q * n[0],
                             0.5 * (d[2] * n[0] + d[3] * n[1]) - q * n[1]])

        return t

    def _neumann(self, family: str) -> Callable:
        grad = self.exact_pressure_grad(family)

        def g(x, y):
            n = unit_square_side_normal(x, y)
            d = grad(x, y)
            return d[0] * n[0] + d[1] * n[1]

        return g

    def data(self, family: str = "s1") -> ProblemData:
        """Data for the traction-form problems (S1, PP) built from a family's pressure."""
        F = self.traction_force_for(family)
        return ProblemData(
            force=_lambdify_vec(F),
            div_force=_lambdify(sympy.simplify(sympy.diff(F[0], _x) + sympy.diff(F[1], _y))),
            traction=self._traction(family),
            neumann=self._neumann(family),
            pressure_bc=self.exact_pressure(family),
        )

    def data_s2(self) -> ProblemData:
        """Data for the curl-form problem (S2)."""
        return ProblemData(force=_lambdify_vec(self.force_expr("s2")),
                           pressure_bc=self.exact_pressure("s2"))

    def data_for(self, problem: str) -> ProblemData:
        return self.data_s2() if problem.upper() == "S2" else self.data("s1")

    def check(self) -> None:
        """Symbolic sanity checks on the exact velocity."""
        if self.div_velocity != 0:
            raise ConfigurationError(f"{self.name}: velocity is not divergence free")


def manufactured(name: str) -> ManufacturedCase:
    """Named manufactured cases on the unit square with the pipe layout.

    ``ms1`` is plane Poiseuille flow, exactly representable by P2/P1.
    ``ms2`` is a smooth stream-function flow with non-trivial data.
    """
    key = name.lower().replace("_", "").replace("-", "")
    if key in ("ms1", "ms1poiseuille"):
        case = ManufacturedCase(
            "ms1",
            (_y * (1 - _y), sympy.Integer(0)),
            (1 - _x) / 2,
            2 * (1 - _x),
        )
    elif key in ("ms2", "ms2trig"):
        psi = sympy.sin(sympy.pi * _x) ** 2 * sympy.sin(sympy.pi * _y) ** 2
        p = sympy.cos(sympy.pi * _x) * sympy.cos(sympy.pi * _y)
        case = ManufacturedCase("ms2", (sympy.diff(psi, _y), -sympy.diff(psi, _x)), p, p)
    else:
        raise ConfigurationError(f"unknown manufactured case {name!r}; use ms1 or ms2")
    case.check()
    return case


# --- convergence ------------------------------------------------------------

def solve_case(case: ManufacturedCase, problem: str, n: int, layout=None,
               **solver_options) -> FieldSolution:
    """Solve one problem for a manufactured case on the n×n unit-square mesh.

    ``solver_options`` are forwarded to the solver (e.g. ``grad_div`` for S2).
    """
    mesh = generate_unit_square(n, layout or case.layout)
    solver = {"S1": solve_S1, "S2": solve_S2, "PP": solve_PP}.get(problem.upper())
    if solver is None:
        raise ConfigurationError(f"unknown problem {problem!r}")
    return solver(mesh, case.data_for(problem), **solver_options)


def solution_errors(case: ManufacturedCase, sol: FieldSolution) -> dict:
    family = "s2" if sol.problem == "S2" else "s1"
    _, eu = error_norms(sol.velocity_space, sol.velocity, case.exact_velocity(),
                        case.exact_velocity_grad())
    pl2, ph1 = error_norms(sol.pressure_space, sol.pressure, case.exact_pressure(family),
                           case.exact_pressure_grad(family))
    return dict(err_u_h1=eu, err_p_l2=pl2, err_p_h1=ph1)


def _rate(e0, e1):
    if e0 <= 0 or e1 <= 0:
        return float("nan")
    return math.log2(e0 / e1)


def run_convergence(case: ManufacturedCase, problem: str, levels: int, n0: int = 4) -> list[dict]:
    """Errors on meshes n0, 2·n0, … with observed rates log2(e_l / e_{l+1})."""
    if levels < 2:
        raise ConfigurationError("a convergence study needs at least two levels")
    ns = [n0 * 2**k for k in range(levels)]
    rows = []
    for n in ns:
        sol = solve_case(case, problem, n)
        rows.append(dict(n=n, h=1.0 / n, **solution_errors(case, sol)))
    keys = ("err_u_h1", "err_p_l2", "err_p_h1")
    for i, row in enumerate(rows):
        for k in keys:
            row["rate_" + k[4:]] = float("nan") if i == 0 else _rate(rows[i - 1][k], row[k])
    return rows


# --- estimate verification --------------------------------------------------

CSV_COLUMNS = ("level", "h", "eps", "lhs_u", "lhs_p", "rhs_flux", "rhs_trace", "ratio")


@dataclass(frozen=True)
class EstimateRow:
    level: int
    h: float
    eps: float
    lhs_u: float
    lhs_p: float
    rhs_flux: float
    rhs_trace: float

    @property
    def lhs(self) -> float:
        return self.lhs_u + self.lhs_p

    @property
    def rhs(self) -> float:
        return self.rhs_flux + self.rhs_trace

    @property
    def ratio(self) -> float:
        """LHS/RHS; reported as 0 when the right side vanishes to roundoff."""
        return self.lhs / self.rhs if self.rhs > 1e-12 else 0.0


@dataclass
class EstimateReport:
    comparison: str
    case: str
    rows: list[EstimateRow]

    def csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.level] + [repr(float(v)) for v in
                                    (r.h, r.eps, r.lhs_u, r.lhs_p, r.rhs_flux, r.rhs_trace, r.ratio)])
        return out.getvalue()

    def nonzero(self) -> list[EstimateRow]:
        return [r for r in self.rows if r.eps > 0]

    def ratio_spread(self) -> float:
        ratios = [r.ratio for r in self.nonzero()]
        return max(ratios) / min(ratios) if ratios and min(ratios) > 0 else float("inf")

    def max_ratio(self) -> float:
        return max((r.ratio for r in self.nonzero()), default=float("nan"))

    def linear_fit_residual(self, attr: str = "lhs") -> float:
        """Relative residual of the least-squares fit LHS ≈ a·ε through the origin."""
        rows = self.nonzero()
        e = np.array([r.eps for r in rows])
        v = np.array([getattr(r, attr) for r in rows])
        if not len(rows) or not np.any(v):
            return float("nan")
        a = (e @ v) / (e @ e)
        return float(np.linalg.norm(v - a * e) / np.linalg.norm(v))

    def summary(self) -> dict:
        return dict(
            comparison=self.comparison,
            case=self.case,
            rows=len(self.rows),
            ratio_spread=self.ratio_spread(),
            max_ratio=self.max_ratio(),
            linear_fit_residual=self.linear_fit_residual(),
        )


def flux_perturbation(x, y):
    """Smooth Γ1 profile; equals sin(πx) on horizontal sides."""
    return np.sin(np.pi * x) + np.sin(np.pi * y)


def dirichlet_perturbation(x, y):
    """Smooth Γ2 profile; equals y(1−y) on vertical sides."""
    return x * (1 - x) + y * (1 - y)


def tangential_perturbation(x, y):
    """Tangential traction profile ζ·τ with ζ = y(1−y) on vertical sides."""
    n = unit_square_side_normal(x, y)
    z = dirichlet_perturbation(x, y)
    return np.stack([-n[1] * z, n[0] * z])


def _shifted(base: Callable, extra: Callable, eps: float) -> Callable:
    if eps == 0.0:
        return base
    return lambda x, y: base(x, y) + eps * extra(x, y)


def verify_estimate_S1(case: ManufacturedCase, eps_list: Sequence[float], n: int) -> EstimateReport:
    """Compare S1 with PP driven by perturbed Neumann and Dirichlet pressure data."""
    mesh = generate_unit_square(n, case.layout)
    data = case.data("s1")
    s1 = solve_S1(mesh, data)
    V, Q = s1.velocity_space, s1.pressure_space
    flux = pressure_flux_functional(Q, s1.pressure, data.div_force)
    spec_n = trace_spectrum(Q, GAMMA1, closed=False)
    spec_d = trace_spectrum(Q, GAMMA2, closed=True)

    def one(eps):
        g = _shifted(data.neumann, flux_perturbation, eps)
        pb = _shifted(data.pressure_bc, dirichlet_perturbation, eps)
        pp = solve_PP(mesh, replace(data, neumann=g, pressure_bc=pb))
        return EstimateRow(
            level=n, h=1.0 / n, eps=float(eps),
            lhs_u=h1_norm(V, s1.velocity - pp.velocity),
            lhs_p=h1_norm(Q, s1.pressure - pp.pressure),
            rhs_flux=h_minus_half_norm(spec_n, flux - neumann_functional(Q, g)),
            rhs_trace=h_half_norm(spec_d, (s1.pressure - interpolate(Q, pb))[spec_d.nodes]),
        )

    return EstimateReport("S1-PP", case.name, _pmap(one, eps_list))


def verify_estimate_S2(
    case: ManufacturedCase,
    eps_list: Sequence[float],
    n: int,
    perturb: Iterable[str] = ("flux", "traction"),
) -> EstimateReport:
    """Compare S2 with PP driven by the discrete S2 traction and perturbed data.

    ``perturb`` selects which of the Neumann flux and the Γ2 traction are
    shifted by ε; the Dirichlet pressure stays exact.
    """
    perturb = set(perturb)
    if not perturb <= {"flux", "traction"}:
        raise ConfigurationError(f"unknown perturbation targets {sorted(perturb)}")
    mesh = generate_unit_square(n, case.layout)
    s2 = solve_S2(mesh, case.data_s2())
    data = case.data("s2")
    V, Q = s2.velocity_space, s2.pressure_space
    t_s2 = traction_functional(V, s2.velocity, Q, s2.pressure, data.force)
    profile = traction_pair_functional(V, tangential_perturbation)
    flux = pressure_flux_functional(Q, s2.pressure, data.div_force)
    spec_n = trace_spectrum(Q, GAMMA1, closed=False)
    spec_t = trace_spectrum(V, GAMMA2, closed=False)

    def one(eps):
        g = _shifted(data.neumann, flux_perturbation, eps if "flux" in perturb else 0.0)
        t = t_s2 + (eps if "traction" in perturb else 0.0) * profile
        pp = solve_PP(mesh, replace(data, neumann=g, traction=t))
        return EstimateRow(
            level=n, h=1.0 / n, eps=float(eps),
            lhs_u=h1_norm(V, s2.velocity - pp.velocity),
            lhs_p=h1_norm(Q, s2.pressure - pp.pressure),
            rhs_flux=h_minus_half_norm(spec_n, flux - neumann_functional(Q, g)),
            rhs_trace=h_minus_half_norm(spec_t, t_s2 - t),
        )

    return EstimateReport("S2-PP", case.name, _pmap(one, eps_list))


def zero_mismatch(case: ManufacturedCase, n: int, problem: str = "S1") -> EstimateRow:
    """LHS and RHS of an estimate with exact PP data (ε = 0)."""
    rep = (verify_estimate_S1 if problem.upper() == "S1" else verify_estimate_S2)(case, [0.0], n)
    return rep.rows[0]


# --- discrete functional-analytic constants ---------------------------------

def _smallest(A: np.ndarray, B: np.ndarray) -> float:
    lam = sla.eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])
    return float(lam[0])


def poincare_constant(mesh: Mesh, markers: Sequence[int], degree: int = 2) -> float:
    """min ‖∇φ‖/‖φ‖ over scalar functions vanishing on the given boundary parts."""
    S = build_space(mesh, degree)
    nodes = np.unique(np.concatenate([S.boundary_nodes(m)[0] for m in markers
                                      if len(mesh.edges_with_marker(m))]))
    free = np.setdiff1d(np.arange(S.ndofs), nodes)
    if len(free) > MAX_CONSTANT_DOFS:
        raise ConfigurationError(f"{len(free)} dofs exceed the dense cap {MAX_CONSTANT_DOFS}")
    K = assemble_matrix(FormKind.GRAD_GRAD, S)[np.ix_(free, free)].toarray()
    M = assemble_matrix(FormKind.MASS, S)[np.ix_(free, free)].toarray()
    return math.sqrt(max(_smallest(K, M), 0.0))


def discrete_constants(mesh: Mesh) -> dict:
    """Discrete inf-sup, Korn, Poincaré and curl constants on one mesh.

    Every constant is the square root of the smallest generalized eigenvalue
    of the relevant quadratic-form pair.  ``c_curl_graddiv`` repeats the
    curl constant for the operator the S2 solver actually uses (curl form
    plus the grad-div term), on the same discretely divergence-free space.
    """
    V = build_space(mesh, 2, 2)
    Q = build_space(mesh, 1)
    G = (assemble_matrix(FormKind.MASS, V) + assemble_matrix(FormKind.GRAD_GRAD, V)).toarray()
    Bfull = assemble_matrix(FormKind.DIV_COUPLE, V, Q).toarray()

    free = essential_constraints(V, "velocity_noslip_gamma1").free
    if len(free) > MAX_CONSTANT_DOFS:
        raise ConfigurationError(f"{len(free)} dofs exceed the dense cap {MAX_CONSTANT_DOFS}")
    Gf = G[np.ix_(free, free)]
    B = Bfull[:, free]
    Mp = assemble_matrix(FormKind.MASS, Q).toarray()
    S = B @ sla.solve(Gf, B.T, assume_a="pos")
    beta = math.sqrt(max(_smallest(0.5 * (S + S.T), Mp), 0.0))

    Dm = 2.0 * assemble_matrix(FormKind.SYM_GRAD_HALF, V).toarray()[np.ix_(free, free)]
    korn = math.sqrt(max(_smallest(Dm, Gf), 0.0))

    hfree = essential_constraints(V, "H_space").free
    Z = sla.null_space(Bfull[:, hfree])
    C = assemble_matrix(FormKind.CURL_CURL, V).toarray()[np.ix_(hfree, hfree)]
    Gh = G[np.ix_(hfree, hfree)]
    ZGZ = Z.T @ Gh @ Z
    curl = math.sqrt(max(_smallest(Z.T @ C @ Z, ZGZ), 0.0))
    Cd = C + S2_GRAD_DIV * assemble_matrix(FormKind.GRAD_DIV, V).toarray()[np.ix_(hfree, hfree)]
    curl_div = math.sqrt(max(_smallest(Z.T @ Cd @ Z, ZGZ), 0.0))

    return dict(
        beta_infsup=beta,
        c_korn=korn,
        c_poincare_gamma1=poincare_constant(mesh, [GAMMA1]),
        c_poincare_gamma2=poincare_constant(mesh, [GAMMA2]),
        c_curl=curl,
        c_curl_graddiv=curl_div,
    )


def to_json(obj) -> str:
    """Deterministic JSON (sorted keys, non-finite floats as strings)."""

    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (np.floating, float)):
            f = float(o)
            return f if math.isfinite(f) else str(f)
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return o

    return json.dumps(clean(obj), sort_keys=True, indent=2) + "\n"


__all__ = [
    "ManufacturedCase",
    "manufactured",
    "solve_case",
    "solution_errors",
    "run_convergence",
    "EstimateRow",
    "EstimateReport",
    "verify_estimate_S1",
    "verify_estimate_S2",
    "zero_mismatch",
    "discrete_constants",
    "poincare_constant",
    "to_json",
]
