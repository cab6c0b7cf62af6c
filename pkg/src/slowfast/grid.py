"""Uniform box grids, nodal fields, multilinear interpolation and CSV I/O."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class BoxGrid:
    """Tensor-product grid with uniform spacing on each axis.

    Nodes are ordered row-major (last axis fastest), matching ``np.ravel``.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    @property
    def ndim(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return (hi - lo) / (np.asarray(self.resolution) - 1)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.resolution))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.resolution)]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, ndim)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node(self, index: int | Sequence[int]) -> np.ndarray:
        if np.ndim(index) == 0:
            index = np.unravel_index(int(index), self.shape)
        return np.asarray(self.lower) + np.asarray(index) * self.spacing

    def flat_index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def nearest_node(self, point: Sequence[float]) -> int:
        p = np.clip(np.asarray(point, float), self.lower, self.upper)
        idx = np.rint((p - np.asarray(self.lower)) / self.spacing).astype(int)
        return self.flat_index(idx)

    def contains_interior(self, index: int) -> bool:
        multi = np.unravel_index(index, self.shape)
        return all(0 < i < n - 1 for i, n in zip(multi, self.shape))

    def product(self, other: "BoxGrid") -> "BoxGrid":
        return BoxGrid(self.lower + other.lower, self.upper + other.upper,
                       self.resolution + other.resolution)


def make_box_grid(lower, upper, resolution) -> BoxGrid:
    lower = tuple(float(v) for v in np.atleast_1d(lower))
    upper = tuple(float(v) for v in np.atleast_1d(upper))
    res = np.atleast_1d(resolution)
    if res.size == 1 and len(lower) > 1:
        res = np.repeat(res, len(lower))
    res = tuple(int(r) for r in res)
    if not (len(lower) == len(upper) == len(res)) or len(res) == 0:
        raise GridError("dimension mismatch between lower, upper and resolution")
    if any(r < 2 for r in res):
        raise GridError("need at least 2 nodes per axis")
    if any(not (lo < hi) for lo, hi in zip(lower, upper)):
        raise GridError(f"degenerate bounds: lower={lower} upper={upper}")
    return BoxGrid(lower, upper, res)


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar values attached to the nodes of a grid (row-major order).

    ``+inf`` entries are allowed only as the unreachable-distance sentinel.
    """

    grid: BoxGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size != self.grid.n_nodes:
            raise GridError(f"field has {vals.size} values for {self.grid.n_nodes} nodes")
        if np.isnan(vals).any() or np.isneginf(vals).any():
            raise GridError("field values must be finite or +inf")
        object.__setattr__(self, "values", vals)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def __call__(self, point) -> float:
        return interpolate(self, point)


def interpolation_stencil(grid: BoxGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat corner indices and multilinear weights for each point.

    Points outside the box are clamped onto it first.  Returns arrays of shape
    (n_points, 2**ndim); weights are nonnegative and sum to one.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = grid.ndim
    lo, h = np.asarray(grid.lower), grid.spacing
    res = np.asarray(grid.resolution)
    s = (np.clip(pts, grid.lower, grid.upper) - lo) / h
    base = np.clip(np.floor(s).astype(np.int64), 0, res - 2)
    frac = np.clip(s - base, 0.0, 1.0)

    strides = np.array([int(np.prod(res[k + 1:])) for k in range(d)], dtype=np.int64)
    corners = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    idx = (base @ strides)[:, None] + (corners @ strides)[None, :]
    w = np.ones((pts.shape[0], corners.shape[0]))
    for k in range(d):
        fk = frac[:, k][:, None]
        w *= np.where(corners[None, :, k] == 1, fk, 1.0 - fk)
    return idx, w


def interpolate_values(grid: BoxGrid, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    idx, w = interpolation_stencil(grid, points)
    return np.sum(np.asarray(values).ravel()[idx] * w, axis=1)


def interpolate(field: Field, point) -> float:
    """Multilinear interpolation at one point; exact at nodes, clamped outside."""
    return float(interpolate_values(field.grid, field.values, np.asarray(point, float).reshape(1, -1))[0])


def gradient(field: Field, node: int | Sequence[int]) -> np.ndarray:
    """Central differences at interior nodes, first-order one-sided at the boundary."""
    grid = field.grid
    arr = field.as_array()
    multi = np.unravel_index(int(node), grid.shape) if np.ndim(node) == 0 else tuple(node)
    h = grid.spacing
    out = np.empty(grid.ndim)
    for k in range(grid.ndim):
        i, n = multi[k], grid.shape[k]

        def at(j):
            m = list(multi)
            m[k] = j
            return arr[tuple(m)]

        if 0 < i < n - 1:
            out[k] = (at(i + 1) - at(i - 1)) / (2 * h[k])
        elif i == 0:
            out[k] = (at(1) - at(0)) / h[k]
        else:
            out[k] = (at(n - 1) - at(n - 2)) / h[k]
    return out


def axis_names(prefix: str, dim: int) -> list[str]:
    return [prefix] if dim == 1 else [f"{prefix}{k + 1}" for k in range(dim)]


def write_field_csv(field: Field, path, names: Sequence[str] | None = None,
                    value_name: str = "value") -> Path:
    """One row per node: coordinates then value."""
    path = Path(path)
    names = list(names) if names is not None else axis_names("y", field.grid.ndim)
    nodes = field.grid.nodes()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [value_name])
        for coords, v in zip(nodes, field.values):
            w.writerow([repr(float(c)) for c in coords] + [repr(float(v))])
    return path


def grid_from_coordinates(coords: np.ndarray) -> tuple[BoxGrid, np.ndarray]:
    """Recover a BoxGrid from scattered node coordinates and the row permutation."""
    coords = np.atleast_2d(coords)
    axes = [np.unique(coords[:, k]) for k in range(coords.shape[1])]
    grid = make_box_grid([a[0] for a in axes], [a[-1] for a in axes], [a.size for a in axes])
    if grid.n_nodes != coords.shape[0]:
        raise GridError("coordinates do not form a full tensor grid")
    multi = [np.rint((coords[:, k] - grid.lower[k]) / grid.spacing[k]).astype(int)
             for k in range(grid.ndim)]
    return grid, np.ravel_multi_index(multi, grid.shape)


def read_field_csv(path) -> tuple[Field, list[str]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    grid, order = grid_from_coordinates(body[:, :-1])
    values = np.empty(grid.n_nodes)
    values[order] = body[:, -1]
    return Field(grid, values), header[:-1]
