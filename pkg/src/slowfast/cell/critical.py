"""Critical value by bisection on negative-cycle existence, plus Aubry detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..grid import BoxGrid, Field, make_box_grid
from .graph import MetricGraph, MinLoop, NegativeCycle, build_metric_graph, min_cycle_length
from .instance import CellInstance, hamiltonian_h0


class AubryInconclusive(RuntimeError):
    pass


@dataclass(eq=False)
class CriticalResult:
    c0: float
    bracket: tuple[float, float]
    floor: float
    upper_seed: float
    iterations: int
    aubry_nodes: np.ndarray
    loop_defect: Field
    normalized_defect: Field
    threshold: float
    gap_ratio: float
    y0: int
    distance_from_aubry: Field
    all_pairs: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)
    graph: MetricGraph = field(repr=False)

    @property
    def y_grid(self) -> BoxGrid:
        return self.graph.y_grid

    def summary(self) -> dict:
        nodes = self.y_grid.nodes()
        return {
            "c0": self.c0,
            "bracket": list(self.bracket),
            "floor": self.floor,
            "upper_seed": self.upper_seed,
            "iterations": self.iterations,
            "aubry_nodes": [int(i) for i in self.aubry_nodes],
            "aubry_points": nodes[self.aubry_nodes].tolist(),
            "threshold": self.threshold,
            "gap_ratio": self.gap_ratio,
            "y0": int(self.y0),
            "y0_point": nodes[self.y0].tolist(),
            "rho_min": float(self.loop_defect.values.min()),
        }


def upper_seed(cell: CellInstance, graph: MetricGraph) -> float:
    """max{0, H0(y, 0)} over nodes and edge midpoints: u = 0 is a subsolution there."""
    pts = np.vstack([graph.y_grid.nodes(), graph.midpoints])
    q = np.zeros_like(pts)
    return float(max(0.0, np.max(hamiltonian_h0(cell, pts, q))))


def _is_minloop(graph: MetricGraph, b: float) -> bool:
    return isinstance(min_cycle_length(graph, b, with_defect=False), MinLoop)


def level_outcomes(graph: MetricGraph, levels) -> list[str]:
    """Outcome class name of the cycle test at each level."""
    return [type(min_cycle_length(graph, float(b), with_defect=False)).__name__ for b in levels]


def critical_value(cell: CellInstance, y_grid: BoxGrid, tol: float, kappa: float = 4.0,
                   radius: int = 1, max_iter: int = 200) -> CriticalResult:
    """Smallest level b at which the grid graph has no negative cycle.

    The feasibility floor is tried first; when it already admits no negative
    cycle the bracket collapses to a point.  Aubry nodes are those whose
    shortest closed loop has average cost per unit Euclidean length at most
    kappa times the final bracket width.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    base = build_metric_graph(cell, y_grid, 0.0, radius=radius, allow_infeasible=True)
    floor = base.floor
    if not math.isfinite(floor):
        raise ValueError("H0 is unbounded below at some midpoint")
    hi = max(upper_seed(cell, base), floor)
    grow = max(1.0, abs(hi))
    for _ in range(60):
        if _is_minloop(base, hi):
            break
        hi += grow
        grow *= 2
    else:
        raise RuntimeError("no level without negative cycles was found")

    iterations = 0
    if _is_minloop(base, floor):
        lo = hi = floor
    else:
        lo = floor
        while hi - lo > tol and iterations < max_iter:
            mid = 0.5 * (lo + hi)
            if _is_minloop(base, mid):
                hi = mid
            else:
                lo = mid
            iterations += 1

    graph = base.at_level(hi)
    outcome = min_cycle_length(graph)
    assert isinstance(outcome, MinLoop)
    D = outcome.all_pairs
    aubry, rho, nu, thr, gap, y0 = detect_aubry(y_grid, D, hi - lo, kappa, scale=abs(hi))
    return CriticalResult(
        c0=float(hi), bracket=(float(lo), float(hi)), floor=float(floor),
        upper_seed=float(upper_seed(cell, base)), iterations=iterations,
        aubry_nodes=aubry, loop_defect=Field(y_grid, rho), normalized_defect=Field(y_grid, nu),
        threshold=thr, gap_ratio=gap, y0=y0, distance_from_aubry=Field(y_grid, D[y0]),
        all_pairs=D, potential=outcome.potential, graph=graph,
    )


def detect_aubry(y_grid: BoxGrid, D: np.ndarray, width: float, kappa: float, scale: float = 1.0):
    """Threshold the per-unit-length loop defect and report the gap above it."""
    nodes = y_grid.nodes()
    sep = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=-1)
    R = D + D.T
    np.fill_diagonal(R, np.inf)
    rho = R.min(axis=1)
    np.fill_diagonal(sep, 1.0)
    nu = (R / (2 * sep)).min(axis=1)
    thr = kappa * (width + 1e-9 * max(1.0, scale))
    aubry = np.flatnonzero(nu <= thr)
    if aubry.size == 0:
        raise AubryInconclusive("Aubry detection inconclusive; refine grid "
                                f"(min defect {nu.min():.3g} above threshold {thr:.3g})")
    above = nu[nu > thr]
    gap = float(above.min() / thr) if above.size else math.inf
    low = nu.min()
    ties = np.flatnonzero(nu <= low + 1e-12 * max(1.0, abs(low)))
    r = np.linalg.norm(nodes[ties], axis=1)
    y0 = int(ties[np.lexsort((ties, r))[0]])
    return aubry, rho, nu, float(thr), gap, y0


def suggest_cell_box(cell: CellInstance, margin: float = 1.0, factor: float = 1.5,
                     r_max: float = 64.0, samples: int = 9) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Cube [-R, R]^M scaled by ``factor`` beyond which min_a ell0 exceeds the upper seed + margin.

    The upper seed is estimated as max{0, H0(y, 0)} over the unit cube.
    """
    m = cell.dim
    unit = make_box_grid([-1.0] * m, [1.0] * m, [samples] * m).nodes()
    seed = max(0.0, float(np.max(hamiltonian_h0(cell, unit, np.zeros_like(unit)))))
    level = seed + margin
    radius = 1.0
    while radius <= r_max:
        shell = make_box_grid([-radius] * m, [radius] * m, [4 * samples] * m).nodes()
        outer = shell[np.max(np.abs(shell), axis=1) >= radius * (1 - 1e-12)]
        further = [outer * s for s in (1.0, 1.5, 2.0, 4.0)]
        if all(np.min(cell.ell0(pts).min(axis=1)) > level for pts in further):
            break
        radius *= 1.25
    r = factor * min(radius, r_max)
    return tuple([-r] * m), tuple([r] * m)
