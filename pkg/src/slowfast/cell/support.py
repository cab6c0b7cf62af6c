"""Support functions of the sublevel sets Z_b(y) = {q : H0(y, q) <= b}.

Z_b(y) is the polyhedron {q : q.n_a <= ell0_a + b} with n_a = -g0(y, a).
Its support function is the LP  max q.v  over Z_b(y), whose dual is

    min  sum_a lam_a (ell0_a + b)   s.t.  sum_a lam_a n_a = v,  lam >= 0.

Optimal duals can be taken basic (at most M nonzero entries), so we
enumerate small supports once per (point, v) and keep the pieces
(A, B) = (lam.ell0, sum lam).  Then sigma_b = min_k A_k + b B_k for every b
at which Z_b(y) is nonempty, which makes bisection on b cheap.  The
feasibility floor min_q H0(y, q) is the same kind of enumeration on the
dual  max -mu.ell0  over {mu >= 0, sum mu = 1, sum mu n = 0}.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from .instance import CellInstance

_PAIR_BUDGET = 2_000_000


class UnboundedSupport(ArithmeticError):
    """The support LP is unbounded: sampled fast drifts do not surround v."""


class _Infeasible:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "INFEASIBLE"

    def __reduce__(self):
        return (_Infeasible, ())


INFEASIBLE = _Infeasible()


def control_classes(cell: CellInstance, points) -> tuple[np.ndarray, np.ndarray]:
    """Constraint normals n = -g0 and offsets ell0 at each point.

    Controls whose g0 agree at every point collapse into one constraint
    carrying the smallest ell0 (the others are redundant).
    Returns (normals (P, C, M), ell (P, C)).
    """
    pts = np.atleast_2d(np.asarray(points, float))
    g, ell = cell.data(pts)
    key = np.transpose(g, (1, 0, 2)).reshape(g.shape[1], -1)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    order = np.argsort(first)          # keep classes in control order
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    cls = rank[inverse]
    n_cls = order.size
    normals = -g[:, first[order], :]
    best = np.full((pts.shape[0], n_cls), np.inf)
    for k in range(g.shape[1]):
        np.minimum(best[:, cls[k]], ell[:, k], out=best[:, cls[k]])
    return normals, best


def _basic_solutions(cols: np.ndarray, target: np.ndarray, size: int):
    """Nonnegative solutions of cols[:, S].T @ lam = target over |S| = size.

    cols (P, C, D), target (P, D).  Yields (combos (T, s), lam (p, T, s),
    valid (p, T), rows slice) chunked over points.
    """
    P, C, D = cols.shape
    if size > D or size > C:
        return
    combos = np.array(list(itertools.combinations(range(C), size)), dtype=np.int64)
    T = combos.shape[0]
    chunk = max(1, _PAIR_BUDGET // max(T, 1))
    eye = np.eye(size)
    for start in range(0, P, chunk):
        rows = slice(start, min(P, start + chunk))
        N = cols[rows][:, combos, :]                          # (p, T, s, D)
        tgt = target[rows]
        G = np.einsum("ptid,ptjd->ptij", N, N)
        r = np.einsum("ptid,pd->pti", N, tgt)
        diag = np.prod(np.diagonal(G, axis1=-2, axis2=-1), axis=-1)
        det = np.linalg.det(G)
        ok = (diag > 0) & (det > 1e-10 * diag)
        lam = np.linalg.solve(np.where(ok[..., None, None], G, eye), r[..., None])[..., 0]
        scale = np.linalg.norm(tgt, axis=-1)[:, None] + 1e-300
        resid = np.linalg.norm(np.einsum("ptid,pti->ptd", N, lam) - tgt[:, None, :], axis=-1)
        lam_scale = np.abs(lam).max(axis=-1) + 1.0
        ok &= resid <= 1e-9 * (scale + lam_scale)
        ok &= np.all(lam >= -1e-10 * lam_scale[..., None], axis=-1)
        yield combos, np.clip(lam, 0.0, None), ok, rows


def feasibility_floor(cell: CellInstance, points) -> np.ndarray:
    """min over q of H0(y, q) at each point; -inf when H0(y, .) is unbounded below."""
    pts = np.atleast_2d(np.asarray(points, float))
    normals, ell = control_classes(cell, pts)
    P, C, M = normals.shape
    if M == 3:
        return np.array([_floor_lp(normals[i], ell[i]) for i in range(P)])
    cols = np.concatenate([normals, np.ones((P, C, 1))], axis=-1)
    target = np.zeros((P, M + 1))
    target[:, -1] = 1.0
    out = np.full(P, -np.inf)
    for size in range(1, M + 2):
        for combos, lam, ok, rows in _basic_solutions(cols, target, size):
            vals = -np.sum(lam * ell[rows][:, combos], axis=-1)
            vals = np.where(ok, vals, -np.inf)
            out[rows] = np.maximum(out[rows], vals.max(axis=1))
    return out


def _floor_lp(normals: np.ndarray, ell: np.ndarray) -> float:
    """min b s.t. q.n_a - b <= ell_a, by HiGHS."""
    C, M = normals.shape
    A = np.hstack([normals, -np.ones((C, 1))])
    c = np.zeros(M + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=A, b_ub=ell, bounds=[(None, None)] * (M + 1), method="highs")
    if res.status == 3:
        return -math.inf
    if res.status != 0:
        raise RuntimeError(f"floor LP failed: {res.message}")
    return float(res.x[-1])


def dual_pieces(cell: CellInstance, points, vectors) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine pieces of b -> sigma_b(point, v) for paired rows of points/vectors.

    Returns (A, B, bounded): sigma_b = min_k A[:, k] + b B[:, k], invalid pieces
    hold A = +inf.  ``bounded`` is False where no dual piece exists, i.e. the
    support LP is unbounded.  Zero vectors get the single piece (0, 0).
    """
    pts = np.atleast_2d(np.asarray(points, float))
    vec = np.atleast_2d(np.asarray(vectors, float))
    normals, ell = control_classes(cell, pts)
    P, C, M = normals.shape
    blocks_a, blocks_b = [], []
    for size in range(1, M + 1):
        T = math.comb(C, size)
        A = np.full((P, T), np.inf)
        B = np.zeros((P, T))
        for combos, lam, ok, rows in _basic_solutions(normals, vec, size):
            A[rows] = np.where(ok, np.sum(lam * ell[rows][:, combos], axis=-1), np.inf)
            B[rows] = np.where(ok, lam.sum(axis=-1), 0.0)
        blocks_a.append(A)
        blocks_b.append(B)
    A = np.concatenate(blocks_a, axis=1)
    B = np.concatenate(blocks_b, axis=1)
    zero = np.all(vec == 0, axis=1)
    A[zero], B[zero] = np.inf, 0.0
    A[zero, 0] = 0.0
    bounded = np.isfinite(A).any(axis=1)
    return A, B, bounded


def evaluate_pieces(A: np.ndarray, B: np.ndarray, b: float) -> np.ndarray:
    return np.min(A + b * B, axis=1)


def support_sigma(cell: CellInstance, b: float, y, v, tol: float = 1e-12):
    """Support function of Z_b(y) in direction v.

    Returns INFEASIBLE when Z_b(y) is empty and raises UnboundedSupport when
    the LP has no finite maximum.
    """
    y = np.asarray(y, float).reshape(1, -1)
    v = np.asarray(v, float).reshape(1, -1)
    floor = feasibility_floor(cell, y)[0]
    if b < floor - tol * max(1.0, abs(floor)):
        return INFEASIBLE
    A, B, bounded = dual_pieces(cell, y, v)
    if not bounded[0]:
        raise UnboundedSupport(f"support LP unbounded at y={y[0].tolist()} v={v[0].tolist()}")
    return float(evaluate_pieces(A, B, b)[0])


def support_sigma_lp(cell: CellInstance, b: float, y, v):
    """Primal LP route through HiGHS; used to cross-check the enumeration."""
    y = np.asarray(y, float).reshape(1, -1)
    v = np.asarray(v, float).ravel()
    g, ell = cell.data(y)
    res = linprog(-v, A_ub=-g[0], b_ub=ell[0] + b, bounds=[(None, None)] * v.size,
                  method="highs")
    if res.status == 2:
        return INFEASIBLE
    if res.status == 3:
        raise UnboundedSupport("support LP unbounded")
    return float(-res.fun)
