"""Sampled effective Hamiltonian and the Lax-Friedrichs solver for the limit equation."""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cell import critical_value, freeze
from .grid import BoxGrid, Field, axis_names, grid_from_coordinates, interpolate_values
from .hjb import CFLError
from .problem import ControlProblem, bar_u0_many


class GradientRangeError(ValueError):
    pass


@dataclass(eq=False)
class EffectiveTable:
    x_grid: BoxGrid
    p_grid: BoxGrid
    values: np.ndarray          # (n_x, n_p), nan where the entry failed
    bracket_width: np.ndarray
    gap_ratio: np.ndarray
    errors: dict = field(default_factory=dict)    # (i, j) -> message
    tol: float = 0.0

    @property
    def failed(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    @property
    def grid(self) -> BoxGrid:
        return self.x_grid.product(self.p_grid)

    def evaluate(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Multilinear interpolation in (x, p); x is clamped, p must lie in range."""
        x = np.atleast_2d(np.asarray(x, float))
        p = np.atleast_2d(np.asarray(p, float))
        lo, hi = np.asarray(self.p_grid.lower), np.asarray(self.p_grid.upper)
        slack = 1e-12 * np.maximum(1.0, np.abs(hi - lo))
        out = np.any((p < lo - slack) | (p > hi + slack), axis=1)
        if out.any():
            worst = float(np.abs(p[out]).max())
            raise GradientRangeError(f"gradient {worst:.4g} leaves the table p-range "
                                     f"[{list(self.p_grid.lower)}, {list(self.p_grid.upper)}]")
        if self.failed.any():
            raise ValueError("table has failed entries")
        return interpolate_values(self.grid, self.values.ravel(), np.hstack([x, p]))


def _entry(args):
    problem, x0, p0, y_grid, tol, kappa = args
    try:
        res = critical_value(freeze(problem, x0, p0), y_grid, tol, kappa=kappa)
    except Exception as exc:  # entry is marked failed, table still returned
        return math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}"
    return res.c0, res.bracket[1] - res.bracket[0], res.gap_ratio, None


def tabulate_effective(problem: ControlProblem, x_grid: BoxGrid, p_grid: BoxGrid, y_grid: BoxGrid,
                       tol: float, workers: int = 1, kappa: float = 4.0) -> EffectiveTable:
    """Critical value of the frozen cell problem at every (x_i, p_j)."""
    if x_grid.ndim != problem.dim_slow or p_grid.ndim != problem.dim_slow:
        raise ValueError("x- and p-grids must have the slow dimension")
    xs, ps = x_grid.nodes(), p_grid.nodes()
    jobs = [(problem, x, p, y_grid, tol, kappa) for x in xs for p in ps]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_entry, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_entry(j) for j in jobs]
    shape = (xs.shape[0], ps.shape[0])
    arr = np.array([r[:3] for r in results], dtype=float).reshape(shape + (3,))
    errors = {}
    for k, r in enumerate(results):
        if r[3] is not None:
            errors[divmod(k, shape[1])] = r[3]
    return EffectiveTable(x_grid, p_grid, arr[..., 0], arr[..., 1], arr[..., 2], errors, tol)


def _grid_pairs(shape: tuple[int, ...]):
    """Flat index triples (a, mid, b) for grid-aligned pairs with an exact midpoint."""
    multi = np.array(list(itertools.product(*[range(n) for n in shape])), dtype=np.int64)
    a, b = np.triu_indices(multi.shape[0], k=1)
    s = multi[a] + multi[b]
    even = np.all(s % 2 == 0, axis=1)
    a, b = a[even], b[even]
    mid = np.ravel_multi_index(tuple((s[even] // 2).T), shape)
    return a, mid, b


def _nan_reduce(fn, arr: np.ndarray, empty: float) -> float:
    finite = arr[~np.isnan(arr)]
    return float(fn(finite)) if finite.size else empty


def table_diagnostics(table: EffectiveTable, tol: float | None = None, spike: float = 5.0) -> dict:
    """Midpoint convexity in p, nearest-neighbour increments and bracket widths."""
    tol = table.tol if tol is None else tol
    vals = table.values
    nx, npp = vals.shape
    a, mid, b = _grid_pairs(table.p_grid.shape)
    viol = vals[:, mid] - 0.5 * (vals[:, a] + vals[:, b])      # (n_x, pairs)
    worst_conv = float(np.nanmax(viol)) if viol.size else 0.0
    conv_out = set()
    if viol.size:
        for i, k in zip(*np.nonzero(viol > tol)):
            conv_out.add((int(i), int(mid[k])))

    full = vals.reshape(table.x_grid.shape + table.p_grid.shape)
    incs = np.full(full.shape + (2 * full.ndim,), np.nan)
    for ax in range(full.ndim):
        d = np.abs(np.diff(full, axis=ax))
        lead = [slice(None)] * full.ndim
        lead[ax] = slice(0, -1)
        incs[tuple(lead) + (2 * ax,)] = d
        lead[ax] = slice(1, None)
        incs[tuple(lead) + (2 * ax + 1,)] = d
    flat = incs.reshape(nx * npp, -1)
    finite = flat[np.isfinite(flat)]
    modulus = float(finite.max()) if finite.size else 0.0
    median = float(np.median(finite)) if finite.size else 0.0
    cutoff = max(spike * median, tol)
    with np.errstate(invalid="ignore"):
        spiky = np.all(np.where(np.isnan(flat), np.inf, flat) > cutoff, axis=1)
    cont_out = {divmod(int(k), npp) for k in np.flatnonzero(spiky)}

    return {
        "convexity_violation": worst_conv,
        "convexity_ok": bool(worst_conv <= tol),
        "continuity_modulus": modulus,
        "max_bracket_width": _nan_reduce(np.nanmax, table.bracket_width, 0.0),
        "min_gap_ratio": _nan_reduce(np.nanmin, table.gap_ratio, math.inf),
        "convexity_outliers": sorted(conv_out),
        "continuity_outliers": sorted(cont_out),
        "failed_entries": sorted(table.errors),
    }


def write_table_csv(table: EffectiveTable, path) -> Path:
    """Columns x..., p..., c0, bracket (final bisection width), gap_ratio."""
    path = Path(path)
    n = table.x_grid.ndim
    header = axis_names("x", n) + axis_names("p", n) + ["c0", "bracket", "gap_ratio"]
    xs, ps = table.x_grid.nodes(), table.p_grid.nodes()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, x in enumerate(xs):
            for j, p in enumerate(ps):
                row = list(x) + list(p) + [table.values[i, j], table.bracket_width[i, j],
                                           table.gap_ratio[i, j]]
                w.writerow([repr(float(v)) for v in row])
    return path


def read_table_csv(path) -> EffectiveTable:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    n = (len(header) - 3) // 2
    x_grid, _ = grid_from_coordinates(np.unique(body[:, :n], axis=0))
    p_grid, _ = grid_from_coordinates(np.unique(body[:, n:2 * n], axis=0))
    xi = np.array([x_grid.nearest_node(r) for r in body[:, :n]])
    pj = np.array([p_grid.nearest_node(r) for r in body[:, n:2 * n]])
    out = [np.full((x_grid.n_nodes, p_grid.n_nodes), np.nan) for _ in range(3)]
    for k in range(3):
        out[k][xi, pj] = body[:, 2 * n + k]
    return EffectiveTable(x_grid, p_grid, out[0], out[1], out[2])


@dataclass(eq=False)
class LimitSolution:
    x_grid: BoxGrid
    horizon: float
    dt: float
    times: np.ndarray
    slices: np.ndarray          # (n_times, n_x)
    scheme_dissipation: np.ndarray

    def slice(self, k: int) -> Field:
        return Field(self.x_grid, self.slices[k])

    def at_time(self, t: float) -> np.ndarray:
        t = float(np.clip(t, self.times[0], self.times[-1]))
        j = int(np.searchsorted(self.times, t))
        if j < len(self.times) and abs(self.times[j] - t) <= 1e-12 * max(1.0, t):
            return self.slices[j]
        j = max(j, 1)
        s = (t - self.times[j - 1]) / (self.times[j] - self.times[j - 1])
        return (1 - s) * self.slices[j - 1] + s * self.slices[j]

    def value_at(self, x, t: float) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, float)).reshape(-1, self.x_grid.ndim)
        return interpolate_values(self.x_grid, self.at_time(t), pts)


# Strict margins keep every Lax-Friedrichs stencil weight positive, so comparison
# holds bitwise in floating point rather than only up to rounding.
DISSIPATION_MARGIN = 1.05
CFL_SAFETY = 0.95


def dissipation(table: EffectiveTable) -> np.ndarray:
    """Largest divided difference of the table along each p-axis, times a small margin."""
    full = table.values.reshape((table.x_grid.n_nodes,) + table.p_grid.shape)
    h = table.p_grid.spacing
    return np.array([DISSIPATION_MARGIN * float(np.abs(np.diff(full, axis=k + 1)).max()) / h[k]
                     for k in range(table.p_grid.ndim)])


def limit_cfl_dt(table: EffectiveTable, x_grid: BoxGrid) -> float:
    rate = float(np.sum(dissipation(table) / x_grid.spacing))
    return math.inf if rate == 0 else CFL_SAFETY / rate


def solve_limit(problem: ControlProblem, table: EffectiveTable, x_grid: BoxGrid,
                y_grid_for_u0: BoxGrid, T: float, dt: float, stride: int = 1,
                initial: np.ndarray | None = None) -> LimitSolution:
    """Explicit Lax-Friedrichs for u_t + Hbar(x, Du) = 0 from u(., 0) = min_y u0(., y).

    Ghost nodes copy the boundary value, which keeps the scheme monotone.
    ``initial`` overrides the initial slice (flat array over x_grid).
    """
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    theta = dissipation(table)
    h = x_grid.spacing
    steps = 0 if T == 0 else max(1, math.ceil(T / dt - 1e-9))
    dt_eff = T / steps if steps else float(dt)
    ratio = dt_eff * float(np.sum(theta / h))
    if steps and ratio > 1 + 1e-9:
        raise CFLError(f"CFL violated: dt*sum(theta/h) = {ratio:.4g} > 1")

    xs = x_grid.nodes()
    u = (bar_u0_many(problem, xs, y_grid_for_u0) if initial is None
         else np.asarray(initial, float).ravel().copy())
    if u.shape != (x_grid.n_nodes,):
        raise ValueError("initial data has the wrong size")
    shape = x_grid.shape
    times, out = [0.0], [u.copy()]
    for step in range(1, steps + 1):
        arr = u.reshape(shape)
        pad = np.pad(arr, 1, mode="edge")
        grad = np.empty(shape + (x_grid.ndim,))
        visc = np.zeros(shape)
        for k in range(x_grid.ndim):
            plus = [slice(1, -1)] * x_grid.ndim
            minus = [slice(1, -1)] * x_grid.ndim
            plus[k], minus[k] = slice(2, None), slice(0, -2)
            up, um = pad[tuple(plus)], pad[tuple(minus)]
            grad[..., k] = (up - um) / (2 * h[k])
            visc += 0.5 * theta[k] * (up - 2 * arr + um) / h[k]
        hbar = table.evaluate(xs, grad.reshape(-1, x_grid.ndim)).reshape(shape)
        u = (arr - dt_eff * (hbar - visc)).ravel()
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite value at step {step}")
        if step % stride == 0 or step == steps:
            times.append(step * dt_eff)
            out.append(u.copy())
    return LimitSolution(x_grid, float(T), dt_eff, np.array(times), np.array(out), theta)


def write_limit_csv(sol: LimitSolution, path) -> Path:
    """One row per (time, node): x..., t, u."""
    path = Path(path)
    xs = sol.x_grid.nodes()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(axis_names("x", sol.x_grid.ndim) + ["t", "u"])
        for t, vals in zip(sol.times, sol.slices):
            for x, v in zip(xs, vals):
                w.writerow([repr(float(c)) for c in x] + [repr(float(t)), repr(float(v))])
    return path


def hopf_lax_oracle(x: float, t: float, u0bar, radius_speed: float, samples: int = 10_000) -> float:
    """min of u0bar over [x - s t, x + s t] by a dense scan."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    r = radius_speed * t
    z = np.linspace(x - r, x + r, samples) if r > 0 else np.array([float(x)])
    try:
        vals = np.asarray(u0bar(z), float)
        if vals.shape != z.shape:
            raise ValueError
    except Exception:
        vals = np.array([float(u0bar(v)) for v in z])
    return float(vals.min())
