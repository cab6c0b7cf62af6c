"""Grid digraph with b-parametric Finsler weights and shortest-path tools.

Edge y -> y' carries w = sigma_b((y + y')/2, y' - y).  Negative cycles are
found with a vectorised Bellman-Ford from a virtual source; all-pairs
distances use Johnson reweighting followed by scipy's Dijkstra.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from ..grid import BoxGrid, Field
from .instance import CellInstance
from .support import UnboundedSupport, dual_pieces, evaluate_pieces, feasibility_floor


class InfeasibleLevel(ValueError):
    """Some edge midpoint has an empty sublevel set Z_b."""

    def __init__(self, msg, points):
        super().__init__(msg)
        self.points = points


class NegativeCycleError(ValueError):
    pass


def neighbour_offsets(dim: int, radius: int = 1) -> np.ndarray:
    """Integer offsets in {-r..r}^dim without zero, reduced to primitive steps."""
    offs = [o for o in itertools.product(range(-radius, radius + 1), repeat=dim)
            if any(o) and math.gcd(*map(abs, o)) == 1]
    return np.array(offs, dtype=np.int64)


@dataclass(eq=False)
class MetricGraph:
    cell: CellInstance
    y_grid: BoxGrid
    b: float
    tails: np.ndarray
    heads: np.ndarray
    midpoints: np.ndarray
    disp: np.ndarray
    piece_a: np.ndarray
    piece_b: np.ndarray
    edge_floor: np.ndarray           # min_q H0 at each edge midpoint
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weights = evaluate_pieces(self.piece_a, self.piece_b, self.b)

    @property
    def n_nodes(self) -> int:
        return self.y_grid.n_nodes

    @property
    def n_edges(self) -> int:
        return self.tails.size

    @property
    def floor(self) -> float:
        return float(self.edge_floor.max())

    def weight(self, edge: int, b: float | None = None) -> float:
        b = self.b if b is None else b
        return float(np.min(self.piece_a[edge] + b * self.piece_b[edge]))

    def at_level(self, b: float, allow_infeasible: bool = False) -> "MetricGraph":
        """Same graph re-weighted at level b without recomputing LP pieces."""
        _check_feasible(self, b, allow_infeasible)
        return MetricGraph(self.cell, self.y_grid, float(b), self.tails, self.heads,
                           self.midpoints, self.disp, self.piece_a, self.piece_b,
                           self.edge_floor)

    def scaled(self, factor: np.ndarray) -> "MetricGraph":
        """Edge weights multiplied by a positive per-edge factor."""
        g = self.at_level(self.b, allow_infeasible=True)
        g.weights = self.weights * factor
        return g

    def matrix(self, weights: np.ndarray | None = None) -> sp.csr_matrix:
        w = self.weights if weights is None else weights
        return sp.csr_matrix((w, (self.tails, self.heads)), shape=(self.n_nodes, self.n_nodes))


def _check_feasible(graph: MetricGraph, b: float, allow: bool):
    bad = graph.edge_floor > b + 1e-12 * max(1.0, abs(b))
    if bad.any() and not allow:
        pts = np.unique(graph.midpoints[bad], axis=0)
        raise InfeasibleLevel(f"empty sublevel set at {len(pts)} edge midpoints for b={b:.6g}"
                              f" (floor {graph.floor:.6g}); first {pts[:3].tolist()}", pts)


def build_metric_graph(cell: CellInstance, y_grid: BoxGrid, b: float, radius: int = 1,
                       allow_infeasible: bool = False) -> MetricGraph:
    """Directed grid graph with midpoint-rule support-function weights.

    With ``allow_infeasible`` the weights below the floor are the values of
    the basic dual pieces, which is what exhibits negative cycles there.
    """
    if y_grid.ndim != cell.dim:
        raise ValueError("y-grid dimension does not match the fast dimension")
    shape = np.asarray(y_grid.shape)
    multi = np.stack(np.unravel_index(np.arange(y_grid.n_nodes), y_grid.shape), axis=1)
    tails, heads = [], []
    for off in neighbour_offsets(cell.dim, radius):
        tgt = multi + off
        ok = np.all((tgt >= 0) & (tgt < shape), axis=1)
        tails.append(np.flatnonzero(ok))
        heads.append(np.ravel_multi_index(tuple(tgt[ok].T), y_grid.shape))
    tails = np.concatenate(tails)
    heads = np.concatenate(heads)
    order = np.lexsort((heads, tails))
    tails, heads = tails[order], heads[order]
    nodes = y_grid.nodes()
    mid = 0.5 * (nodes[tails] + nodes[heads])
    disp = nodes[heads] - nodes[tails]

    A, B, bounded = dual_pieces(cell, mid, disp)
    if not bounded.all():
        e = int(np.flatnonzero(~bounded)[0])
        raise UnboundedSupport(f"support LP unbounded on {int((~bounded).sum())} edges, "
                               f"first at midpoint {mid[e].tolist()} direction {disp[e].tolist()}")
    # antiparallel edges share a midpoint
    umid, inv = np.unique(mid, axis=0, return_inverse=True)
    floors = feasibility_floor(cell, umid)[np.asarray(inv).ravel()]
    keep = np.isfinite(A).any(axis=0)
    graph = MetricGraph(cell, y_grid, float(b), tails, heads, mid, disp,
                        A[:, keep], B[:, keep], floors)
    _check_feasible(graph, b, allow_infeasible)
    return graph


# --------------------------------------------------------------------------
# Bellman-Ford


@dataclass
class BellmanFordResult:
    dist: np.ndarray
    pred: np.ndarray              # predecessor edge index, -1 at roots
    cycle: list[int] | None       # edge indices of a negative cycle
    cycle_weight: float | None
    iterations: int


def _pointer_cycle(pred_node: np.ndarray) -> int | None:
    """A node lying on a cycle of the predecessor forest, or None."""
    n = pred_node.size
    nxt = np.where(pred_node < 0, n, pred_node)
    nxt = np.append(nxt, n)
    jump = nxt.copy()
    for _ in range(max(1, math.ceil(math.log2(n + 1)))):
        jump = jump[jump]
    on = np.flatnonzero(jump[:n] < n)
    return int(jump[on[0]]) if on.size else None


def bellman_ford(graph: MetricGraph, sources=None, weights: np.ndarray | None = None,
                 check_every: int = 8) -> BellmanFordResult:
    """Shortest distances from ``sources`` (default: virtual source to all nodes).

    Stops early when no label changes or when the predecessor graph closes a
    cycle whose weight is negative.
    """
    w = graph.weights if weights is None else weights
    n, tails, heads = graph.n_nodes, graph.tails, graph.heads
    dist = np.full(n, np.inf)
    if sources is None:
        dist[:] = 0.0
    else:
        dist[np.atleast_1d(np.asarray(sources, dtype=np.int64))] = 0.0
    pred = np.full(n, -1, dtype=np.int64)
    order = np.argsort(heads, kind="stable")
    sh, st, sw = heads[order], tails[order], w[order]
    starts = np.flatnonzero(np.r_[True, sh[1:] != sh[:-1]])
    group_heads = sh[starts]
    scale = float(np.abs(w).max()) if w.size else 0.0
    slack = 1e-12 * max(scale, 1e-300) * max(1.0, graph.y_grid.shape[0])

    it = 0
    for it in range(1, n + 2):
        cand = dist[st] + sw
        best = np.minimum.reduceat(cand, starts)
        improve = best < dist[group_heads] - slack
        if not improve.any():
            return BellmanFordResult(dist, pred, None, None, it)
        hit = cand == np.repeat(best, np.diff(np.r_[starts, sh.size]))
        idx = np.flatnonzero(hit)
        _, first = np.unique(sh[idx], return_index=True)
        chosen = order[idx[first]]
        gh = group_heads[improve]
        dist[gh] = best[improve]
        pred[gh] = chosen[improve]
        if it % check_every == 0 or it >= n:
            cyc = _extract_cycle(graph, pred, w)
            if cyc is not None:
                return BellmanFordResult(dist, pred, cyc[0], cyc[1], it)
    cyc = _extract_cycle(graph, pred, w)
    if cyc is None:
        raise RuntimeError("Bellman-Ford did not settle and no cycle was found")
    return BellmanFordResult(dist, pred, cyc[0], cyc[1], it)


def _extract_cycle(graph, pred, w):
    pred_node = np.where(pred >= 0, graph.tails[np.maximum(pred, 0)], -1)
    start = _pointer_cycle(pred_node)
    if start is None:
        return None
    edges, node = [], start
    while True:
        e = int(pred[node])
        edges.append(e)
        node = int(graph.tails[e])
        if node == start:
            break
    edges.reverse()
    weight = float(np.sum(w[edges]))
    return (edges, weight) if weight < 0 else None


# --------------------------------------------------------------------------
# outcomes of the cycle test


@dataclass
class NegativeCycle:
    b: float
    cycle_nodes: list[int]
    cycle_weight: float
    reason: str = "cycle"


@dataclass
class MinLoop:
    b: float
    rho_min: float
    potential: np.ndarray = field(repr=False)
    all_pairs: np.ndarray | None = field(default=None, repr=False)


def all_pairs(graph: MetricGraph, potential: np.ndarray | None = None,
              weights: np.ndarray | None = None) -> np.ndarray:
    """Johnson: reweight by a feasible potential, then Dijkstra from every node."""
    w = graph.weights if weights is None else weights
    if potential is None:
        if (w < 0).any():
            res = bellman_ford(graph, weights=w)
            if res.cycle is not None:
                raise NegativeCycleError(f"negative cycle of weight {res.cycle_weight:.3g}")
            potential = res.dist
        else:
            potential = np.zeros(graph.n_nodes)
    red = np.maximum(w + potential[graph.tails] - potential[graph.heads], 0.0)
    D = dijkstra(graph.matrix(red), directed=True)
    return D - potential[:, None] + potential[None, :]


def loop_defect(D: np.ndarray) -> np.ndarray:
    """rho(y) = min over z != y of D[y, z] + D[z, y]."""
    R = D + D.T
    np.fill_diagonal(R, np.inf)
    return R.min(axis=1)


def min_cycle_length(graph: MetricGraph, b: float | None = None, with_defect: bool = True):
    """NegativeCycle if the graph at level b carries one, else MinLoop(rho_min).

    Levels below the feasibility floor count as NegativeCycle (reason
    "infeasible"): no subsolution can exist there.
    """
    if b is not None and b != graph.b:
        try:
            graph = graph.at_level(b)
        except InfeasibleLevel:
            return NegativeCycle(float(b), [], -math.inf, reason="infeasible")
    b = graph.b
    if graph.edge_floor.max() > b + 1e-12 * max(1.0, abs(b)):
        return NegativeCycle(b, [], -math.inf, reason="infeasible")
    if (graph.weights < 0).any():
        res = bellman_ford(graph)
        if res.cycle is not None:
            nodes = [int(graph.tails[e]) for e in res.cycle]
            return NegativeCycle(b, nodes, res.cycle_weight)
        potential = res.dist
    else:
        potential = np.zeros(graph.n_nodes)
    if not with_defect:
        return MinLoop(b, math.nan, potential)
    D = all_pairs(graph, potential)
    rho = loop_defect(D)
    return MinLoop(b, float(rho.min()), potential, D)


# --------------------------------------------------------------------------
# distance fields


@dataclass(eq=False)
class DistanceField:
    source: tuple[int, ...]
    values: Field
    b: float


def distance_field(graph: MetricGraph, source, weights: np.ndarray | None = None) -> DistanceField:
    """min over z in source of S_b(z, y), +inf where unreachable."""
    src = tuple(int(s) for s in np.atleast_1d(np.asarray(source, dtype=np.int64)))
    w = graph.weights if weights is None else weights
    if (w < 0).any():
        res = bellman_ford(graph, sources=src, weights=w)
        if res.cycle is not None:
            raise NegativeCycleError(f"negative cycle at b={graph.b:.6g}; distances undefined")
        vals = res.dist
    else:
        vals = dijkstra(graph.matrix(w), directed=True, indices=list(src), min_only=True)
    return DistanceField(src, Field(graph.y_grid, vals), graph.b)


def reverse_distance_field(graph: MetricGraph, target) -> DistanceField:
    """min over z in target of S_b(y, z), via the transposed graph."""
    flipped = MetricGraph(graph.cell, graph.y_grid, graph.b, graph.heads, graph.tails,
                          graph.midpoints, -graph.disp, graph.piece_a, graph.piece_b,
                          graph.edge_floor)
    flipped.weights = graph.weights
    return distance_field(flipped, target)


def shortest_path_tree(graph: MetricGraph, source: int, potential: np.ndarray | None = None):
    """Distances and node predecessors from one source (Johnson reweighted)."""
    w = graph.weights
    if potential is None:
        potential = np.zeros(graph.n_nodes) if (w >= 0).all() else bellman_ford(graph).dist
    red = np.maximum(w + potential[graph.tails] - potential[graph.heads], 0.0)
    d, pred = dijkstra(graph.matrix(red), directed=True, indices=int(source),
                       return_predecessors=True)
    return d - potential[source] + potential, pred


def path_nodes(pred: np.ndarray, source: int, target: int) -> list[int]:
    if source == target:
        return [source]
    out, node = [target], target
    while node != source:
        node = int(pred[node])
        if node < 0:
            return []
        out.append(node)
    return out[::-1]
