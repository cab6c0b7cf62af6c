"""Solve one frozen cell problem and compare with the closed forms of the quadcell family."""

import argparse

import numpy as np

from slowfast.cell import (bounded_subsolution, critical_value, freeze, lipschitz_audit,
                           verify_viscosity)
from slowfast.grid import axis_names, make_box_grid, write_field_csv
from slowfast.problem import builtin_problem


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p0", type=float, default=0.0)
    ap.add_argument("--nodes", type=int, default=161)
    ap.add_argument("--tol", type=float, default=1e-3)
    ap.add_argument("--csv", default="cell_distance.csv")
    args = ap.parse_args()

    problem = builtin_problem("quadcell")
    cell = freeze(problem, [0.0], [args.p0])
    grid = make_box_grid([-2.0], [2.0], [args.nodes])
    crit = critical_value(cell, grid, args.tol)
    y = grid.nodes()[:, 0]
    print(f"c0 = {crit.c0:.6f} (closed form {abs(args.p0):.6f}), bracket {crit.bracket}")
    print(f"Aubry nodes at y = {y[crit.aubry_nodes].round(4).tolist()}, gap ratio {crit.gap_ratio:.3g}")
    if args.p0 == 0.0:
        S = crit.distance_from_aubry.values
        core = np.abs(y) <= 1.5
        print(f"sup |S(y0, y) - |y|^3/3| on [-1.5, 1.5] = {np.abs(S - np.abs(y) ** 3 / 3)[core].max():.3e}")
    u = bounded_subsolution(cell, crit)
    tol = 10 * grid.spacing[0]
    print("bounded subsolution:", verify_viscosity(u, cell, crit.c0, "subsolution", tol).to_dict())
    print("critical solution:",
          verify_viscosity(crit.distance_from_aubry, cell, crit.c0, "supersolution", tol).to_dict())
    print("Lipschitz audit:", lipschitz_audit(u, cell, crit.c0))
    write_field_csv(crit.distance_from_aubry, args.csv, axis_names("y", 1), "S")
    print(f"distance field written to {args.csv}")


if __name__ == "__main__":
    main()
