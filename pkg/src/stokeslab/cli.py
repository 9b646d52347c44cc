"""Command-line front end.

Subcommands::

    stokeslab mesh         --n 4 --layout pipe --out mesh/
    stokeslab solve        --problem s1 --case ms1 --n 4 --vtk out/
    stokeslab convergence  --problem s1 --case ms2 --levels 4 --n0 4 --out conv/
    stokeslab verify-s1    --case ms1 --n 8,16 --eps 1e-3,1e-2,1e-1 --out v1/
    stokeslab verify-s2    --case ms1 --n 8 --eps 1e-3,1e-2,1e-1 --perturb traction
    stokeslab constants    --n 2,4,8 --out const/

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

from .errors import ConfigurationError, NumericalError, StokesLabError
from .mesh import BcLayout, generate_unit_square, write_vtk
from .verify import (
    CSV_COLUMNS,
    EstimateReport,
    discrete_constants,
    manufactured,
    run_convergence,
    solution_errors,
    solve_case,
    to_json,
    verify_estimate_S1,
    verify_estimate_S2,
)

log = logging.getLogger("stokeslab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

# thresholds used for the pass/fail flags in summary files
FIT_RESIDUAL_MAX = 0.01
RATIO_SPREAD_MAX = 2.0
MESH_RATIO_CHANGE_MAX = 2.0
CONSTANT_MIN = 0.05
CONSTANT_DRIFT_MAX = 0.10


class UsageError(ConfigurationError):
    """Bad command line or config file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- value parsing ----------------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    out = []
    for t in filter(None, (s.strip() for s in text.split(","))):
        try:
            v = float(t)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad number {t!r}") from None
        if not v >= 0 or v == float("inf"):
            raise argparse.ArgumentTypeError(f"eps values must be finite and >= 0, got {t}")
        out.append(v)
    if not out:
        raise argparse.ArgumentTypeError("empty eps list")
    return out


def _layout(text: str) -> BcLayout:
    try:
        return BcLayout.parse(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _problem(text: str) -> str:
    p = text.upper()
    if p not in ("S1", "S2", "PP"):
        raise argparse.ArgumentTypeError(f"problem must be s1, s2 or pp, got {text!r}")
    return p


# --- output -----------------------------------------------------------------

def write_atomic(path: Path, data: str | bytes) -> Path:
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("wrote %s", path)
    return path


def _rows_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in columns])
    return out.getvalue()


# --- subcommands ------------------------------------------------------------

def cmd_mesh(args) -> dict:
    mesh = generate_unit_square(args.n, args.layout)
    out = Path(args.out)
    write_atomic(out / f"mesh_n{args.n}.txt", mesh.to_text())
    if args.vtk:
        write_atomic(Path(args.vtk) / f"mesh_n{args.n}.vtk", write_vtk(mesh))
    return dict(vertices=mesh.num_vertices, cells=len(mesh.cells),
                boundary_edges=len(mesh.boundary_edges))


def cmd_solve(args) -> dict:
    case = manufactured(args.case)
    options = {}
    if args.grad_div is not None:
        if args.problem != "S2":
            raise UsageError("--grad-div only applies to --problem s2")
        options["grad_div"] = args.grad_div
    sol = solve_case(case, args.problem, args.n, args.layout, **options)
    errors = solution_errors(case, sol)
    result = dict(problem=args.problem, case=case.name, n=args.n,
                  layout=args.layout.markers(), diagnostics=sol.diagnostics, errors=errors)
    stem = f"{args.problem.lower()}_{case.name}_n{args.n}"
    out = Path(args.out or args.vtk or ".")
    write_atomic(out / f"{stem}.json", to_json(result))
    if args.vtk:
        write_atomic(Path(args.vtk) / f"{stem}.vtk", write_vtk(sol.mesh, [sol]))
    return result


def cmd_convergence(args) -> dict:
    case = manufactured(args.case)
    rows = run_convergence(case, args.problem, args.levels, args.n0)
    cols = ("n", "h", "err_u_h1", "err_p_l2", "err_p_h1", "rate_u_h1", "rate_p_l2", "rate_p_h1")
    stem = f"convergence_{args.problem.lower()}_{case.name}"
    out = Path(args.out)
    write_atomic(out / f"{stem}.csv", _rows_csv(cols, rows))
    result = dict(problem=args.problem, case=case.name, rows=rows)
    write_atomic(out / f"{stem}.json", to_json(result))
    return result


def estimate_summary(reports: Sequence[EstimateReport]) -> dict:
    """Per-level statistics and pass/fail flags for a list of estimate reports."""
    levels = []
    for rep in reports:
        s = rep.summary()
        s.pop("rows")
        s["level"] = rep.rows[0].level if rep.rows else None
        levels.append(s)
    flags = {}
    if any(r.nonzero() for r in reports):
        flags["eps_affinity"] = all(s["linear_fit_residual"] <= FIT_RESIDUAL_MAX for s in levels)
        flags["ratio_spread"] = all(s["ratio_spread"] <= RATIO_SPREAD_MAX for s in levels)
    if len(reports) > 1 and flags:
        m = [s["max_ratio"] for s in levels]
        change = max(max(a, b) / min(a, b) for a, b in zip(m, m[1:])) if min(m) > 0 else float("inf")
        flags["mesh_stability"] = change <= MESH_RATIO_CHANGE_MAX
    return dict(levels=levels, flags=flags, passed=all(flags.values()))


def _cmd_verify(args, problem: str) -> dict:
    case = manufactured(args.case)
    if problem == "S1":
        reports = [verify_estimate_S1(case, args.eps, n) for n in args.n]
    else:
        reports = [verify_estimate_S2(case, args.eps, n, perturb=args.perturb) for n in args.n]
    body = "".join(r.csv() if i == 0 else r.csv().split("\n", 1)[1]
                   for i, r in enumerate(reports))
    stem = f"verify_{problem.lower()}_{case.name}"
    out = Path(args.out)
    write_atomic(out / f"{stem}.csv", body)
    summary = dict(comparison=reports[0].comparison, case=case.name, eps=args.eps,
                   columns=list(CSV_COLUMNS), **estimate_summary(reports))
    write_atomic(out / f"{stem}_summary.json", to_json(summary))
    return summary


def cmd_verify_s1(args) -> dict:
    return _cmd_verify(args, "S1")


def cmd_verify_s2(args) -> dict:
    return _cmd_verify(args, "S2")


def constants_summary(per_level: dict[int, dict]) -> dict:
    names = sorted(next(iter(per_level.values())))
    drift, flags = {}, {}
    for k in names:
        vals = [c[k] for c in per_level.values()]
        lo, hi = min(vals), max(vals)
        drift[k] = (hi - lo) / lo if lo > 0 else float("inf")
        flags[f"{k}_bounded"] = lo >= CONSTANT_MIN
        if len(vals) > 1:
            flags[f"{k}_stable"] = drift[k] < CONSTANT_DRIFT_MAX
    return dict(drift=drift, flags=flags, passed=all(flags.values()))


def cmd_constants(args) -> dict:
    per_level = {n: discrete_constants(generate_unit_square(n, args.layout)) for n in args.n}
    result = dict(layout=args.layout.markers(),
                  constants={str(n): c for n, c in per_level.items()},
                  **constants_summary(per_level))
    write_atomic(Path(args.out) / "constants.json", to_json(result))
    return result


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stokeslab",
                     description="Stokes / pressure-Poisson finite element verification tool.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *, case=True, n_list=False):
        p.add_argument("--config", help="key=value file; explicit flags take precedence")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        if case:
            p.add_argument("--case", default="ms1", help="manufactured case: ms1 or ms2")
        if n_list:
            p.add_argument("--n", type=_int_list, default=[8],
                           help="comma-separated mesh levels (default: 8)")

    p = sub.add_parser("mesh", help="generate a unit-square mesh")
    common(p, case=False)
    p.add_argument("--n", type=_positive_int, default=4, help="cells per side (default: 4)")
    p.add_argument("--layout", type=_layout, default=BcLayout(), help="boundary layout")
    p.add_argument("--vtk", help="also write a VTK file into this directory")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("solve", help="solve one problem on a manufactured case")
    common(p)
    p.set_defaults(out=None)
    p.add_argument("--problem", type=_problem, default="S1", help="s1, s2 or pp")
    p.add_argument("--n", type=_positive_int, default=8, help="cells per side (default: 8)")
    p.add_argument("--layout", type=_layout, default=BcLayout(), help="boundary layout")
    p.add_argument("--vtk", help="write the solution as VTK into this directory")
    p.add_argument("--grad-div", type=float, default=None,
                   help="S2 only: weight of the grad-div term (0 gives the bare curl form)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", help="errors and rates under uniform refinement")
    common(p)
    p.add_argument("--problem", type=_problem, default="S1", help="s1, s2 or pp")
    p.add_argument("--levels", type=_positive_int, default=4, help="number of meshes")
    p.add_argument("--n0", type=_positive_int, default=4, help="coarsest cells per side")
    p.set_defaults(func=cmd_convergence)

    for name, func, doc in (("verify-s1", cmd_verify_s1, "S1 versus PP estimate"),
                            ("verify-s2", cmd_verify_s2, "S2 versus PP estimate")):
        p = sub.add_parser(name, help=doc)
        common(p, n_list=True)
        p.add_argument("--eps", type=_float_list, default=[0.0, 1e-3, 1e-2, 1e-1],
                       help="comma-separated perturbation sizes")
        if name == "verify-s2":
            p.add_argument("--perturb", type=lambda s: tuple(filter(None, s.split(","))),
                           default=("flux", "traction"),
                           help="perturbed data: flux, traction or both (comma-separated)")
        p.set_defaults(func=func)

    p = sub.add_parser("constants", help="discrete inf-sup, Korn, Poincare and curl constants")
    common(p, case=False)
    p.add_argument("--n", type=_int_list, default=[2, 4, 8], help="mesh levels (default: 2,4,8)")
    p.add_argument("--layout", type=_layout, default=BcLayout(), help="boundary layout")
    p.set_defaults(func=cmd_constants)
    return parser


def _option_names(parser: argparse.ArgumentParser, command: str) -> set[str]:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {s[2:] for a in sub.choices[command]._actions for s in a.option_strings
            if s.startswith("--")} - {"help", "config"}


def read_config(path: str, allowed: set[str]) -> list[str]:
    """Turn a key=value file into command-line tokens, rejecting unknown keys."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc.strerror}") from None
    tokens = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        if key not in allowed:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}; allowed: {sorted(allowed)}")
        tokens += [f"--{key}", value.strip()]
    return tokens


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        extra = read_config(args.config, _option_names(parser, args.command))
        i = argv.index(args.command)
        args = parser.parse_args(list(argv[: i + 1]) + extra + list(argv[i + 1:]))
    return args


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StokesLabError as exc:  # pragma: no cover - every subclass is handled above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if isinstance(result, dict) and "passed" in result:
        print(f"{args.command}: {'PASS' if result['passed'] else 'FAIL'}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
