"""Distinguished sub/supersolutions of the cell problem and discrete viscosity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ..grid import Field
from .critical import CriticalResult
from .graph import (MetricGraph, build_metric_graph, distance_field,
                    path_nodes, shortest_path_tree)
from .instance import CellInstance, hamiltonian_h0
from .support import dual_pieces, evaluate_pieces


class CorrectorError(ValueError):
    pass


@dataclass
class K0Region:
    c_mask: np.ndarray        # nodes of C
    k0_mask: np.ndarray       # nodes of K0
    diameter: float           # max over C x C of |S|
    q0: float


def k0_region(cell: CellInstance, crit: CriticalResult, q0: float | None = None) -> K0Region:
    """C = {H0(y, 0) >= c0 - Q0} and its |S|-diameter neighbourhood K0.

    Q0 defaults to max(bound on |f|, max |g| on the grid).  When C is empty
    the node maximising H0(y, 0) stands in for it.
    """
    nodes = crit.y_grid.nodes()
    if q0 is None:
        g = cell.g0(nodes)
        q0 = max(cell.problem.bound_f, float(np.linalg.norm(g, axis=-1).max()))
    h0 = hamiltonian_h0(cell, nodes, np.zeros_like(nodes))
    c_mask = h0 >= crit.c0 - q0
    if not c_mask.any():
        c_mask[int(np.argmax(h0))] = True
    idx = np.flatnonzero(c_mask)
    diam = float(np.abs(crit.all_pairs[np.ix_(idx, idx)]).max())
    sep = np.linalg.norm(nodes[:, None, :] - nodes[None, idx, :], axis=-1).min(axis=1)
    k0 = sep <= diam + 1e-12 * max(1.0, diam)
    return K0Region(c_mask, k0, diam, float(q0))


def bounded_subsolution(cell: CellInstance, crit: CriticalResult, q0: float | None = None) -> Field:
    """u(y) = min over z outside K0 of S(z, y); u = 0 outside K0."""
    reg = k0_region(cell, crit, q0)
    if reg.k0_mask.all():
        raise CorrectorError("K0 covers the whole grid; enlarge y-box")
    outside = np.flatnonzero(~reg.k0_mask)
    u = crit.all_pairs[outside].min(axis=0)
    u[~reg.k0_mask] = 0.0
    return Field(crit.y_grid, u)


def h_profile(r, R0: float, M0: float) -> np.ndarray:
    """1 on [0, R0-3], M0 on [R0-2, inf), linear in between."""
    s = np.clip(np.asarray(r, float) - (R0 - 3.0), 0.0, 1.0)
    return 1.0 + (M0 - 1.0) * s


def weighted_distance(cell: CellInstance, crit: CriticalResult, R0: float, M0: float,
                      y0: int | None = None, k0: K0Region | None = None) -> Field:
    """S^h(y0, .) with edge weights h(|midpoint|) * sigma_c0(midpoint, dy)."""
    if M0 < 1:
        raise CorrectorError("M0 must be at least 1")
    y0 = crit.y0 if y0 is None else int(y0)
    nodes = crit.y_grid.nodes()
    radius = np.linalg.norm(nodes, axis=1)
    k0 = k0_region(cell, crit) if k0 is None else k0
    if np.any(radius[k0.k0_mask] > R0 - 3.0 + 1e-12):
        raise CorrectorError(f"B(0, R0-3) with R0={R0} does not contain K0")
    hn = h_profile(radius, R0, M0)
    h0 = hamiltonian_h0(cell, nodes, np.zeros_like(nodes))
    bad = np.flatnonzero((hn > 1.0) & (h0 >= crit.c0))
    if bad.size:
        raise CorrectorError(f"weight exceeds 1 where H0(y,0) >= c0, at node {int(bad[0])} "
                             f"y={nodes[bad[0]].tolist()}")
    graph = crit.graph
    factor = h_profile(np.linalg.norm(graph.midpoints, axis=1), R0, M0)
    return distance_field(graph, [y0], weights=graph.weights * factor).values


@dataclass
class SupersolutionResult:
    field: Field
    d: float
    M0: float
    R0: float
    lam: float
    postconditions: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v["ok"] for v in self.postconditions.values())


def build_supersolution(cell: CellInstance, crit: CriticalResult, U: Field, lam: float, R0: float,
                        delta: float | None = None) -> SupersolutionResult:
    """w = d + S^h(y0, .) with the weight tuned so that lam * w dominates U near the core."""
    if lam <= 0:
        raise CorrectorError("lambda must be positive")
    nodes = crit.y_grid.nodes()
    radius = np.linalg.norm(nodes, axis=1)
    uv = U.values
    inner = radius <= R0 - 1 + 1e-12
    ball = radius <= R0 + 1e-12
    if np.any(uv[inner] > 0):
        i = int(np.flatnonzero(inner & (uv > 0))[0])
        raise CorrectorError(f"U must be <= 0 on B(0, R0-1); U={uv[i]:.4g} at y={nodes[i].tolist()}")
    if not np.all(np.isfinite(uv[ball])):
        raise CorrectorError("U must be bounded above on B(0, R0)")
    delta = float(crit.y_grid.spacing.min()) if delta is None else float(delta)
    S = crit.distance_from_aubry.values
    d = -float(S.min()) + delta
    M0 = max(float((uv[ball] / lam).max()), 1.0)
    Sh = weighted_distance(cell, crit, R0, M0, crit.y0)
    w = d + Sh.values

    near = np.linalg.norm(nodes - nodes[crit.y0], axis=1) <= 2 * crit.y_grid.spacing.max() + 1e-12
    outer = radius > R0 - 1 + 1e-12
    post = {
        "dominates_U": _check(lam * w[ball] - uv[ball], 0.0, nodes[ball]),
        "equals_S_near_y0": _check(-np.abs(w[near] - d - S[near]), -1e-9, nodes[near]),
        "positive": _check(w, 1e-300, nodes),
        "at_least_M0_outside": _check(w[outer] - M0, 0.0, nodes[outer]) if outer.any()
        else {"ok": True, "worst": math.inf, "at": None},
    }
    return SupersolutionResult(Field(crit.y_grid, w), d, M0, float(R0), float(lam), post)


def _check(slack: np.ndarray, floor: float, pts: np.ndarray) -> dict:
    i = int(np.argmin(slack))
    return {"ok": bool(slack[i] >= floor), "worst": float(slack[i]), "at": pts[i].tolist()}


@dataclass
class ViscosityReport:
    mode: str
    passed: bool
    worst: float              # largest violation (<= 0 means none)
    location: list | None
    checked: int

    def to_dict(self) -> dict:
        return {"mode": self.mode, "passed": self.passed, "worst": self.worst,
                "location": self.location, "checked": self.checked}


def verify_viscosity(u: Field, cell: CellInstance, b: float, mode: str, tol: float,
                     graph: MetricGraph | None = None) -> ViscosityReport:
    """Discrete sub- or supersolution test of H0(y, Du) = b.

    subsolution: u(y') - u(y) <= w(y -> y', b) + tol on every edge.
    supersolution: at interior nodes where the one-sided differences bracket a
    nonempty box of subgradients, min of H0 over that box is >= b - tol.
    """
    if mode == "subsolution":
        return _verify_sub(u, cell, b, tol, graph)
    if mode == "supersolution":
        return _verify_super(u, cell, b, tol)
    raise ValueError(f"unknown mode {mode!r}")


def _verify_sub(u, cell, b, tol, graph):
    if graph is None or graph.y_grid != u.grid:
        graph = build_metric_graph(cell, u.grid, b)
    elif graph.b != b:
        graph = graph.at_level(b)
    v = u.values
    excess = v[graph.heads] - v[graph.tails] - graph.weights - tol
    i = int(np.argmax(excess))
    loc = u.grid.nodes()[graph.tails[i]].tolist()
    return ViscosityReport("subsolution", bool(excess[i] <= 0), float(excess[i]), loc, graph.n_edges)


def _one_sided(u: Field):
    grid = u.grid
    arr = u.as_array()
    h = grid.spacing
    interior = np.ones(grid.shape, bool)
    lo, hi = [], []
    for k in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        sl[k] = 0
        interior[tuple(sl)] = False
        sl[k] = -1
        interior[tuple(sl)] = False
        fwd = np.diff(arr, axis=k, append=np.nan) / h[k]
        bwd = np.diff(arr, axis=k, prepend=np.nan) / h[k]
        lo.append(bwd)
        hi.append(fwd)
    idx = np.flatnonzero(interior.ravel())
    lo = np.stack([a.ravel()[idx] for a in lo], axis=1)
    hi = np.stack([a.ravel()[idx] for a in hi], axis=1)
    return idx, lo, hi


def _min_h0_box_1d(g: np.ndarray, ell: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """min over q in [lo, hi] of max_a (-q g_a - ell_a) for each row, exactly."""
    gi, gj = g[:, :, None], g[:, None, :]
    li, lj = ell[:, :, None], ell[:, None, :]
    denom = gj - gi
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(np.abs(denom) > 0, (li - lj) / denom, np.nan)
    cand = np.concatenate([lo[:, None], hi[:, None], cross.reshape(g.shape[0], -1)], axis=1)
    cand = np.where(np.isnan(cand), lo[:, None], cand)
    cand = np.clip(cand, lo[:, None], hi[:, None])
    vals = np.max(-cand[:, :, None] * g[:, None, :] - ell[:, None, :], axis=2)
    return vals.min(axis=1)


def _min_h0_box_lp(g: np.ndarray, ell: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    K, M = g.shape
    A = np.hstack([-g, -np.ones((K, 1))])
    c = np.zeros(M + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=A, b_ub=ell, bounds=list(zip(lo, hi)) + [(None, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"box LP failed: {res.message}")
    return float(res.fun)


def _verify_super(u, cell, b, tol):
    idx, lo, hi = _one_sided(u)
    nodes = u.grid.nodes()[idx]
    tested = np.all(lo <= hi, axis=1)
    if not tested.any():
        return ViscosityReport("supersolution", True, -math.inf, None, 0)
    g, ell = cell.data(nodes[tested])
    if u.grid.ndim == 1:
        mins = _min_h0_box_1d(g[:, :, 0], ell, lo[tested, 0], hi[tested, 0])
    else:
        mins = np.array([_min_h0_box_lp(g[i], ell[i], lo[tested][i], hi[tested][i])
                         for i in range(g.shape[0])])
    deficit = (b - tol) - mins
    i = int(np.argmax(deficit))
    return ViscosityReport("supersolution", bool(deficit[i] <= 0), float(deficit[i]),
                           nodes[tested][i].tolist(), int(tested.sum()))


def lipschitz_audit(u: Field, cell: CellInstance, b: float, slack: float | None = None) -> dict:
    """Axis difference quotients of u against the largest |q_i| allowed in Z_b(y)."""
    grid = u.grid
    arr = u.as_array()
    slope = max(float(np.abs(np.diff(arr, axis=k)).max() / grid.spacing[k])
                for k in range(grid.ndim))
    nodes = grid.nodes()
    eye = np.eye(grid.ndim)
    bound = 0.0
    for direction in np.vstack([eye, -eye]):
        A, B, ok = dual_pieces(cell, nodes, np.broadcast_to(direction, nodes.shape))
        if not ok.all():
            return {"slope": slope, "bound": math.inf, "ok": True}
        bound = max(bound, float(evaluate_pieces(A, B, b).max()))
    slack = 2.0 * float(grid.spacing.max()) if slack is None else slack
    return {"slope": slope, "bound": bound, "ok": bool(slope <= bound + slack)}


def path_confinement(crit: CriticalResult, core_mask: np.ndarray) -> float:
    """Largest |y| visited by recorded shortest paths between core nodes."""
    nodes = crit.y_grid.nodes()
    core = np.flatnonzero(core_mask)
    radius = np.linalg.norm(nodes, axis=1)
    worst = 0.0
    for s in core:
        _, pred = shortest_path_tree(crit.graph, int(s), crit.potential)
        for t in core:
            path = path_nodes(pred, int(s), int(t))
            if path:
                worst = max(worst, float(radius[path].max()))
    return worst


def shell_minima(crit: CriticalResult, shells: int = 3) -> dict:
    """min over the k-th outermost index shell of S(y0, .) and S(., y0), k = 1..shells."""
    grid = crit.y_grid
    multi = np.stack(np.unravel_index(np.arange(grid.n_nodes), grid.shape), axis=1)
    depth = np.min(np.minimum(multi, np.asarray(grid.shape) - 1 - multi), axis=1)
    fwd = crit.all_pairs[crit.y0]
    bwd = crit.all_pairs[:, crit.y0]
    out = {"forward": [], "backward": []}
    for k in range(shells):     # k = 0 is the boundary layer
        m = depth == k
        out["forward"].append(float(fwd[m].min()))
        out["backward"].append(float(bwd[m].min()))
    return out
