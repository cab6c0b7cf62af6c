"""Aubry detection across grid resolutions: node count, gap ratio and c0 drift."""

import argparse

from slowfast.cell import AubryInconclusive, critical_value, freeze
from slowfast.grid import make_box_grid
from slowfast.problem import builtin_problem, problem_from_config

ROTATIONAL = {"problem": {
    "name": "rotational", "dims": {"N": 1, "M": 2},
    "control": {"bounds": [[-1, 1]] * 3, "samples_per_axis": 3},
    "expressions": {"f": ["a1"], "g": ["a2", "a3"], "ell": "y1**2 + y2**2 - a2*y2 + a3*y1",
                    "u0": "x1**2"}, "bound_f": 1.0}}


def study(name, cell, dim, sizes, tol, kappa):
    print(f"\n{name}")
    print(f"{'nodes':>7} {'c0':>12} {'aubry':>6} {'gap':>10} {'iters':>6}")
    for n in sizes:
        grid = make_box_grid([-2.0] * dim, [2.0] * dim, [n] * dim)
        try:
            crit = critical_value(cell, grid, tol, kappa=kappa)
        except AubryInconclusive as exc:
            print(f"{n:7d} {exc}")
            continue
        print(f"{n:7d} {crit.c0:12.6f} {len(crit.aubry_nodes):6d} {crit.gap_ratio:10.3g} "
              f"{crit.iterations:6d}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tol", type=float, default=1e-3)
    ap.add_argument("--kappa", type=float, default=4.0)
    args = ap.parse_args()
    quad = freeze(builtin_problem("quadcell"), [0.0], [0.5])
    study("quadcell, p0 = 0.5", quad, 1, (41, 81, 161, 321), args.tol, args.kappa)
    rot = freeze(problem_from_config(ROTATIONAL), [0.0], [0.0])
    study("rotational 2D cell, p0 = 0", rot, 2, (11, 21, 31), args.tol, args.kappa)


if __name__ == "__main__":
    main()
