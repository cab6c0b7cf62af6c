"""Command line entry point.

Exit codes: 0 success, 1 a numerical criterion failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

from .cell import (AubryInconclusive, InfeasibleLevel, NegativeCycleError, UnboundedSupport,
                   critical_value, freeze, verify_viscosity)
from .effective import (GradientRangeError, limit_cfl_dt, read_table_csv, solve_limit,
                        table_diagnostics, tabulate_effective, write_limit_csv, write_table_csv)
from .grid import BoxGrid, GridError, axis_names, make_box_grid, read_field_csv, write_field_csv
from .harness import HarnessError, ProbeSet, Thresholds, _clean, run_convergence
from .hjb import CFLError, cfl_dt, solve_value_function
from .problem import ProblemError, check_assumptions, load_problem


OK, FAILED, USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def parse_vector(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad vector {text!r}") from None


def parse_grid(text: str, dim: int | None = None) -> BoxGrid:
    """'a,b,n' per axis, axes separated by ';'.  A single axis is repeated to ``dim``."""
    axes = [a for a in str(text).split(";") if a.strip()]
    try:
        parts = [[float(v) for v in a.split(",")] for a in axes]
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected a,b,n") from None
    if not parts or any(len(p) != 3 for p in parts):
        raise UsageError(f"bad grid {text!r}; expected a,b,n")
    if dim is not None and len(parts) == 1 and dim > 1:
        parts = parts * dim
    if dim is not None and len(parts) != dim:
        raise UsageError(f"grid {text!r} has {len(parts)} axes, need {dim}")
    if any(p[2] != int(p[2]) for p in parts):
        raise UsageError("node counts must be integers")
    return make_box_grid([p[0] for p in parts], [p[1] for p in parts], [int(p[2]) for p in parts])


def dump_json(obj, path: str | None):
    text = json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cell_args(args, problem):
    x0, p0 = args.x0, args.p0
    if getattr(args, "cell", None):
        try:
            x0, p0 = args.cell.split(":")
        except ValueError:
            raise UsageError("--cell expects X0:P0 with comma-separated vectors") from None
    if x0 is None or p0 is None:
        raise UsageError("need --x0 and --p0 (or --cell X0:P0)")
    return freeze(problem, parse_vector(x0), parse_vector(p0))


# ----------------------------------------------------------------- commands


def cmd_audit(args) -> int:
    problem = load_problem(args.problem)
    n = problem.dim_slow + problem.dim_fast
    if args.box:
        box = [tuple(parse_vector(b)) for b in args.box.split(";")]
        if len(box) == 1:
            box = box * n
    else:
        box = [(-2.0, 2.0)] * n
    report = check_assumptions(problem, box, args.samples)
    dump_json(report.to_dict(), args.out)
    return OK if report.ok else FAILED


def cmd_cell(args) -> int:
    problem = load_problem(args.problem)
    cell = _cell_args(args, problem)
    y_grid = parse_grid(args.ygrid, problem.dim_fast)
    res = critical_value(cell, y_grid, args.tol, kappa=args.kappa)
    out = Path(args.out) if args.out else None
    stem = out.with_suffix("") if out else Path("cell")
    names = axis_names("y", problem.dim_fast)
    loop_csv = write_field_csv(res.loop_defect, f"{stem}_loop_defect.csv", names, "loop_defect")
    dist_csv = write_field_csv(res.distance_from_aubry, f"{stem}_distance.csv", names, "S")
    payload = res.summary()
    payload["loop_defect_csv_path"] = str(loop_csv)
    payload["distance_csv_path"] = str(dist_csv)
    dump_json(payload, args.out)
    return OK


def cmd_effective(args) -> int:
    problem = load_problem(args.problem)
    n = problem.dim_slow
    table = tabulate_effective(problem, parse_grid(args.xgrid, n), parse_grid(args.pgrid, n),
                               parse_grid(args.ygrid, problem.dim_fast), args.tol,
                               workers=args.workers)
    write_table_csv(table, args.out)
    diag = table_diagnostics(table)
    if args.diagnostics:
        diag["errors"] = {f"{i},{j}": msg for (i, j), msg in sorted(table.errors.items())}
        dump_json(diag, args.diagnostics)
    return FAILED if table.errors else OK


def cmd_solve_eps(args) -> int:
    problem = load_problem(args.problem)
    x_grid = parse_grid(args.xgrid, problem.dim_slow)
    y_grid = parse_grid(args.ygrid, problem.dim_fast)
    dt = args.dt if args.dt else cfl_dt(problem, args.eps, x_grid, y_grid)
    V = solve_value_function(problem, args.eps, x_grid, y_grid, args.T, dt, stride=args.stride)
    names = axis_names("x", problem.dim_slow) + axis_names("y", problem.dim_fast)
    nodes = V.grid.nodes()
    keep = range(len(V.times)) if args.all_slices else [len(V.times) - 1]
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["t", "value"])
        for k in keep:
            for c, v in zip(nodes, V.slices[k]):
                w.writerow([repr(float(z)) for z in c] + [repr(float(V.times[k])), repr(float(v))])
    return OK


def cmd_solve_limit(args) -> int:
    problem = load_problem(args.problem)
    table = read_table_csv(args.table)
    x_grid = parse_grid(args.xgrid, problem.dim_slow)
    y_grid = parse_grid(args.ygrid, problem.dim_fast)
    dt = args.dt if args.dt else limit_cfl_dt(table, x_grid)
    sol = solve_limit(problem, table, x_grid, y_grid, args.T, dt, stride=args.stride)
    write_limit_csv(sol, args.out)
    return OK


def cmd_converge(args) -> int:
    problem = load_problem(args.problem)
    eps = parse_vector(args.eps)
    grids = (parse_grid(args.xgrid, problem.dim_slow), parse_grid(args.ygrid, problem.dim_fast),
             parse_grid(args.pgrid, problem.dim_slow))
    thresholds = Thresholds(args.err_tol, args.osc_tol, args.layer_upper, args.layer_lower)
    probe = ProbeSet(args.probe_x, args.probe_y)
    try:
        report = run_convergence(problem, eps, grids, args.T, args.t_min, tol=args.tol,
                                 table_x_nodes=args.table_x_nodes, probe=probe,
                                 thresholds=thresholds, workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with (out / "errors.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "sup_err", "oracle_err", "max_osc_T"])
        osc = {o["eps"]: o["max_osc"] for o in report.oscillation if o["t"] == report.T}
        for r in report.interior_error:
            w.writerow([repr(r["eps"]), repr(r["sup_err"]), repr(r["oracle_err"]), repr(osc[r["eps"]])])
    return FAILED if report.passed is False else OK


def cmd_verify(args) -> int:
    problem = load_problem(args.problem)
    cell = _cell_args(args, problem)
    field, _ = read_field_csv(args.field)
    if field.grid.ndim != problem.dim_fast:
        raise UsageError("field grid dimension does not match the fast dimension")
    b = args.b
    if b is None:
        b = critical_value(cell, field.grid, args.crit_tol).c0
    tol = args.tol if args.tol is not None else 10 * float(field.grid.spacing.max())
    report = verify_viscosity(field, cell, b, args.mode, tol)
    payload = report.to_dict()
    payload.update({"b": b, "tol": tol})
    dump_json(payload, args.out)
    return OK if report.passed else FAILED


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slowfast", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def problem_arg(p):
        p.add_argument("--problem", required=True, help="builtin name or YAML/JSON config")

    p = sub.add_parser("audit", help="check the standing assumptions on samples")
    problem_arg(p)
    p.add_argument("--box", help="'lo,hi' or 'lo,hi;lo,hi;...' over (x, y)")
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("cell", help="critical value, Aubry nodes and distances of one cell")
    problem_arg(p)
    p.add_argument("--x0")
    p.add_argument("--p0")
    p.add_argument("--cell", help="X0:P0")
    p.add_argument("--ygrid", required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--kappa", type=float, default=4.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cell)

    p = sub.add_parser("effective", help="tabulate the effective Hamiltonian")
    problem_arg(p)
    p.add_argument("--xgrid", required=True)
    p.add_argument("--pgrid", required=True)
    p.add_argument("--ygrid", required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics")
    p.set_defaults(func=cmd_effective)

    p = sub.add_parser("solve-eps", help="semi-Lagrangian value function for one eps")
    problem_arg(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--xgrid", required=True)
    p.add_argument("--ygrid", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--dt", type=float, help="default: largest stable step")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--all-slices", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_eps)

    p = sub.add_parser("solve-limit", help="Lax-Friedrichs solve of the limit equation")
    problem_arg(p)
    p.add_argument("--table", required=True)
    p.add_argument("--xgrid", required=True)
    p.add_argument("--ygrid", default="-2,2,81", help="y-grid for the initial envelope")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--dt", type=float, help="default: largest stable step")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_limit)

    p = sub.add_parser("converge", help="eps-ladder convergence report")
    problem_arg(p)
    p.add_argument("--eps", required=True, help="decreasing list, e.g. 0.4,0.2,0.1")
    p.add_argument("--xgrid", default="-2,2,81")
    p.add_argument("--ygrid", default="-2,2,81")
    p.add_argument("--pgrid", default="-5,5,21")
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--t-min", type=float, default=0.2)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--table-x-nodes", type=int, default=5)
    p.add_argument("--probe-x", type=float, default=1.2)
    p.add_argument("--probe-y", type=float, default=1.0)
    p.add_argument("--err-tol", type=float, default=0.1)
    p.add_argument("--osc-tol", type=float, default=0.1)
    p.add_argument("--layer-upper", type=float, default=0.15)
    p.add_argument("--layer-lower", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("verify", help="discrete viscosity test of a field on a cell")
    problem_arg(p)
    p.add_argument("--field", required=True, help="CSV as written by the cell command")
    p.add_argument("--x0")
    p.add_argument("--p0")
    p.add_argument("--cell", help="X0:P0")
    p.add_argument("--mode", choices=["subsolution", "supersolution"], required=True)
    p.add_argument("--b", type=float, help="level; default: the critical value on the field grid")
    p.add_argument("--tol", type=float, help="default: 10 * grid spacing")
    p.add_argument("--crit-tol", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return ap


_NUMERICAL = (AubryInconclusive, NegativeCycleError, InfeasibleLevel, UnboundedSupport,
              GradientRangeError, FloatingPointError, HarnessError, ArithmeticError, RuntimeError)
_USAGE = (UsageError, ProblemError, GridError, CFLError, FileNotFoundError, KeyError)


_NEGATIVE_VALUE = re.compile(r"^-\.?\d")


def _glue_negative_values(argv: list[str]) -> list[str]:
    """'--xgrid -2,2,81' -> '--xgrid=-2,2,81' so argparse does not read a flag."""
    out: list[str] = []
    for tok in argv:
        prev = out[-1] if out else ""
        if _NEGATIVE_VALUE.match(tok) and prev.startswith("--") and "=" not in prev:
            out[-1] = f"{prev}={tok}"
        else:
            out.append(tok)
    return out


def cli_main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_glue_negative_values(argv))
    except SystemExit as exc:
        return OK if exc.code in (0, None) else USAGE
    try:
        return args.func(args)
    except _USAGE as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except _NUMERICAL as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return FAILED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
