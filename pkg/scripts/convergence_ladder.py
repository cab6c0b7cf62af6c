"""Run the eps-ladder convergence experiment and print the per-eps table."""

import argparse
import json
from pathlib import Path

from slowfast.grid import make_box_grid
from slowfast.harness import run_convergence
from slowfast.problem import load_problem


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", default="quadcell")
    ap.add_argument("--eps", default="0.4,0.2,0.1")
    ap.add_argument("--nodes", type=int, default=81, help="nodes per x- and y-axis")
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--t-min", type=float, default=0.2)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", default="ladder_report.json")
    args = ap.parse_args()

    problem = load_problem(args.problem)
    n, m = problem.dim_slow, problem.dim_fast
    grids = (make_box_grid([-2.0] * n, [2.0] * n, [args.nodes] * n),
             make_box_grid([-2.0] * m, [2.0] * m, [args.nodes] * m),
             make_box_grid([-5.0] * n, [5.0] * n, [21] * n))
    eps = [float(e) for e in args.eps.split(",")]
    report = run_convergence(problem, eps, grids, args.T, args.t_min, workers=args.workers)
    osc = {o["eps"]: o["max_osc"] for o in report.oscillation if o["t"] == report.T}
    print(f"{'eps':>6} {'sup|V-u|':>10} {'oracle':>10} {'osc(T)':>10}")
    for row in report.interior_error:
        print(f"{row['eps']:6.3f} {row['sup_err']:10.4f} {row['oracle_err']:10.4f} "
              f"{osc[row['eps']]:10.4f}")
    for name, crit in sorted(report.criteria.items()):
        print(f"{name:28s} {'ok' if crit['ok'] else 'FAIL'}")
    Path(args.out).write_text(report.to_json())
    print(f"mode {report.mode}, pass {report.passed}; report written to {args.out}")
    print(json.dumps(report.layer["margins"]))


if __name__ == "__main__":
    main()
