"""Semi-Lagrangian value functions for the eps-problem and trajectory tools.

Time runs forward from the t=0 slice, which is the terminal cost u0; one step
of the recursion is

    u^{k+1}(x, y) = min_a [ dt * ell(x, y, a) + u^k(x + dt f, y + (dt/eps) g) ]

with multilinear interpolation and clamping at the box boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import BoxGrid, Field, interpolate_values, interpolation_stencil
from .problem import ControlProblem

_STENCIL_BUDGET = 4e7


class CFLError(ValueError):
    pass


class SteeringError(RuntimeError):
    def __init__(self, msg, trajectory):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass(eq=False)
class ValueFunction:
    eps: float
    x_grid: BoxGrid
    y_grid: BoxGrid
    horizon: float
    dt: float
    times: np.ndarray
    slices: np.ndarray   # (n_times, nx..., ny...) flattened per slice

    @property
    def grid(self) -> BoxGrid:
        return self.x_grid.product(self.y_grid)

    def slice(self, k: int) -> Field:
        return Field(self.grid, self.slices[k])

    def slice_array(self, k: int) -> np.ndarray:
        """Slice k reshaped to (n_x_nodes, n_y_nodes)."""
        return self.slices[k].reshape(self.x_grid.n_nodes, self.y_grid.n_nodes)

    def at_time(self, t: float) -> np.ndarray:
        """Flat slice at time t, linear in time between stored slices."""
        t = float(np.clip(t, self.times[0], self.times[-1]))
        j = int(np.searchsorted(self.times, t))
        if j < len(self.times) and abs(self.times[j] - t) <= 1e-12 * max(1.0, t):
            return self.slices[j]
        j = max(j, 1)
        t0, t1 = self.times[j - 1], self.times[j]
        s = (t - t0) / (t1 - t0)
        return (1 - s) * self.slices[j - 1] + s * self.slices[j]

    def value_at(self, x, y, t: float) -> float:
        pt = np.concatenate([np.atleast_1d(x), np.atleast_1d(y)]).astype(float)
        return float(interpolate_values(self.grid, self.at_time(t), pt[None])[0])


@dataclass(eq=False)
class Trajectory:
    eps: float
    times: np.ndarray
    states: np.ndarray     # (n_times, N + M): slow then fast coordinates
    controls: np.ndarray   # control index per step
    cost: float
    dim_fast: int = 1
    miss_distance: float | None = None

    def slow(self) -> np.ndarray:
        return self.states[:, : self.states.shape[1] - self.dim_fast]

    def fast(self) -> np.ndarray:
        return self.states[:, self.states.shape[1] - self.dim_fast:]


def cfl_dt(problem: ControlProblem, eps: float, x_grid: BoxGrid, y_grid: BoxGrid) -> float:
    """Largest dt whose characteristic feet move at most one cell per axis."""
    f, g, _ = _node_data(problem, x_grid, y_grid)
    speed = np.concatenate([np.abs(f).max(axis=(0, 1)) / x_grid.spacing,
                            np.abs(g).max(axis=(0, 1)) / (eps * y_grid.spacing)])
    top = speed.max()
    return math.inf if top == 0 else float(1.0 / top)


def _node_data(problem, x_grid, y_grid):
    nodes = x_grid.product(y_grid).nodes()
    n = problem.dim_slow
    return problem.all_controls(nodes[:, :n], nodes[:, n:])


def solve_value_function(problem: ControlProblem, eps: float, x_grid: BoxGrid, y_grid: BoxGrid,
                         horizon: float, dt: float, stride: int = 1,
                         terminal: np.ndarray | None = None) -> ValueFunction:
    """Semi-Lagrangian approximation of V^eps on the product grid.

    ``terminal`` overrides u0 sampled on the grid (flat array), which is used
    by the comparison tests.  The number of steps is ceil(horizon/dt) with the
    step shrunk to land on the horizon exactly.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    grid = x_grid.product(y_grid)
    nodes = grid.nodes()
    n = problem.dim_slow
    f, g, ell = problem.all_controls(nodes[:, :n], nodes[:, n:])

    steps = 0 if horizon == 0 else max(1, math.ceil(horizon / dt - 1e-9))
    dt_eff = horizon / steps if steps else float(dt)
    if steps:
        ratio_x = dt_eff * np.abs(f).max() / x_grid.spacing.min() if f.size else 0.0
        ratio_y = dt_eff * np.abs(g).max() / (eps * y_grid.spacing.min())
        ratio = max(ratio_x, ratio_y)
        if ratio > 1 + 1e-9:
            raise CFLError(f"CFL violated: dt*speed/h = {ratio:.4g} > 1 "
                           f"(slow {ratio_x:.4g}, fast {ratio_y:.4g})")

    u = (problem.u0(nodes[:, :n], nodes[:, n:]) if terminal is None
         else np.asarray(terminal, float).ravel().copy())
    if u.shape != (grid.n_nodes,):
        raise ValueError("terminal data has the wrong size")

    k_ctrl = problem.n_controls
    feet = nodes[:, None, :] + dt_eff * np.concatenate([f, g / eps], axis=-1)
    run = dt_eff * ell                                       # (P, K)
    corners = 2 ** grid.ndim
    cached = grid.n_nodes * k_ctrl * corners <= _STENCIL_BUDGET
    if cached:
        idx, w = interpolation_stencil(grid, feet.reshape(-1, grid.ndim))
        idx = idx.reshape(grid.n_nodes, k_ctrl, corners)
        w = w.reshape(grid.n_nodes, k_ctrl, corners)

    times = [0.0]
    out = [u.copy()]
    for step in range(1, steps + 1):
        best = np.full(grid.n_nodes, np.inf)
        for a in range(k_ctrl):
            if cached:
                ia, wa = idx[:, a], w[:, a]
            else:
                ia, wa = interpolation_stencil(grid, feet[:, a])
            cand = run[:, a] + np.sum(u[ia] * wa, axis=1)
            np.minimum(best, cand, out=best)
        if not np.all(np.isfinite(best)):
            raise FloatingPointError(f"non-finite value at step {step}")
        u = best
        if step % stride == 0 or step == steps:
            times.append(step * dt_eff)
            out.append(u.copy())
    return ValueFunction(float(eps), x_grid, y_grid, float(horizon), dt_eff,
                         np.array(times), np.array(out))


def y_oscillation(V: ValueFunction, t_index: int, core_fraction: float = 0.5) -> Field:
    """Per slow node, max - min of the slice over the central core of the y-box."""
    arr = V.slice_array(t_index)
    ys = V.y_grid.nodes()
    lo, hi = np.asarray(V.y_grid.lower), np.asarray(V.y_grid.upper)
    centre, half = 0.5 * (lo + hi), 0.5 * core_fraction * (hi - lo)
    core = np.all(np.abs(ys - centre) <= half + 1e-12, axis=1)
    sub = arr[:, core]
    return Field(V.x_grid, sub.max(axis=1) - sub.min(axis=1))


def _rhs(problem, eps, state, a):
    n = problem.dim_slow
    x, y = state[None, :n], state[None, n:]
    ac = a[None]
    return np.concatenate([eps * problem.f(x, y, ac)[0], problem.g(x, y, ac)[0]])


def _running(problem, state, a):
    n = problem.dim_slow
    return float(problem.ell(state[None, :n], state[None, n:], a[None])[0])


def _heun_step(problem, eps, state, a, dt):
    k1 = _rhs(problem, eps, state, a)
    pred = state + dt * k1
    k2 = _rhs(problem, eps, pred, a)
    new = state + 0.5 * dt * (k1 + k2)
    cost = eps * 0.5 * dt * (_running(problem, state, a) + _running(problem, new, a))
    return new, cost


def simulate_trajectory(problem: ControlProblem, eps: float, init, controls, dt: float) -> Trajectory:
    """Heun integration of xi' = eps f, eta' = g under a control index sequence."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x0, y0 = init
    state = np.concatenate([np.atleast_1d(x0), np.atleast_1d(y0)]).astype(float)
    seq = np.asarray(controls, dtype=int)
    states, cost = [state], 0.0
    for k in seq:
        state, c = _heun_step(problem, eps, state, problem.controls[k], dt)
        states.append(state)
        cost += c
    return Trajectory(float(eps), dt * np.arange(len(states)), np.array(states), seq, cost,
                      problem.dim_fast)


def steer_fast(problem: ControlProblem, eps: float, x, y, z, S: float, dt: float,
               h_y: float, capture: float = 1.0, tolerance: float | None = None) -> Trajectory:
    """Greedy closed-loop steering of the fast variable to ``z`` within time S.

    Each step picks the control maximising -(eta - z).g; once inside the
    capture radius ``capture * h_y`` the control with the smallest |g| is held.
    Raises SteeringError when the final miss exceeds ``tolerance``
    (default 5 eps + 2 h_y).
    """
    if S <= 0:
        raise ValueError("time budget must be positive")
    n = problem.dim_slow
    z = np.atleast_1d(np.asarray(z, float))
    state = np.concatenate([np.atleast_1d(x), np.atleast_1d(y)]).astype(float)
    steps = max(1, math.ceil(S / dt - 1e-9))
    dt_eff = S / steps
    radius = capture * h_y
    states, picks, cost = [state], [], 0.0
    for _ in range(steps):
        xs, ys = state[None, :n], state[None, n:]
        g = problem.g(xs[:, None], ys[:, None], problem.controls[None])[0]
        gap = state[n:] - z
        if np.linalg.norm(gap) < radius:
            k = int(np.argmin(np.linalg.norm(g, axis=1)))
        else:
            k = int(np.argmax(-(g @ gap)))
        state, c = _heun_step(problem, eps, state, problem.controls[k], dt_eff)
        states.append(state)
        picks.append(k)
        cost += c
    miss = float(np.linalg.norm(state[n:] - z))
    traj = Trajectory(float(eps), dt_eff * np.arange(steps + 1), np.array(states),
                      np.array(picks), cost, problem.dim_fast, miss)
    tol = 5 * eps + 2 * h_y if tolerance is None else tolerance
    if miss > tol:
        raise SteeringError(f"steering failed: miss distance {miss:.4g} > {tol:.4g}", traj)
    return traj
