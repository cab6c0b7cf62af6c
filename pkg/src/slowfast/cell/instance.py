"""Frozen cell data (x0, p0) and the cell Hamiltonian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..problem import ControlProblem


@dataclass(frozen=True, eq=False)
class CellInstance:
    problem: ControlProblem
    x0: np.ndarray
    p0: np.ndarray

    @property
    def dim(self) -> int:
        return self.problem.dim_fast

    def _at(self, y):
        y = np.atleast_2d(np.asarray(y, float))
        x = np.broadcast_to(self.x0, (y.shape[0], self.x0.size))
        return self.problem.all_controls(x, y)

    def ell0(self, y) -> np.ndarray:
        """ell(x0, y, a) + p0 . f(x0, y, a) for every control, shape (P, K)."""
        f, _, ell = self._at(y)
        return ell + f @ self.p0

    def g0(self, y) -> np.ndarray:
        """g(x0, y, a) for every control, shape (P, K, M)."""
        return self._at(y)[1]

    def data(self, y) -> tuple[np.ndarray, np.ndarray]:
        f, g, ell = self._at(y)
        return g, ell + f @ self.p0


def freeze(problem: ControlProblem, x0, p0) -> CellInstance:
    x0 = np.atleast_1d(np.asarray(x0, float))
    p0 = np.atleast_1d(np.asarray(p0, float))
    if x0.size != problem.dim_slow or p0.size != problem.dim_slow:
        raise ValueError(f"x0 and p0 need {problem.dim_slow} components")
    return CellInstance(problem, x0, p0)


def hamiltonian_h0(cell: CellInstance, y, q) -> np.ndarray | float:
    """max over sampled controls of (-p0.f - q.g - ell) at (x0, y)."""
    scalar = np.ndim(y) <= 1 and np.ndim(q) <= 1
    y = np.atleast_2d(np.asarray(y, float).reshape(-1, cell.dim))
    q = np.atleast_2d(np.asarray(q, float).reshape(-1, cell.dim))
    g, ell0 = cell.data(y)
    vals = -np.einsum("pkm,pm->pk", g, np.broadcast_to(q, y.shape)) - ell0
    out = vals.max(axis=1)
    return float(out[0]) if scalar else out
