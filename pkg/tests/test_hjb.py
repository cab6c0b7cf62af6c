import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slowfast.effective import hopf_lax_oracle
from slowfast.grid import make_box_grid
from slowfast.hjb import (CFLError, SteeringError, cfl_dt, simulate_trajectory,
                          solve_value_function, steer_fast, y_oscillation)
from slowfast.problem import builtin_problem, problem_from_config


def _custom(**expr):
    base = {"f": ["a1"], "g": ["a2"], "ell": "y**2", "u0": "x**2"}
    base.update(expr)
    return problem_from_config({"problem": {
        "name": "custom", "dims": {"N": 1, "M": 1},
        "control": {"bounds": [[-1, 1], [-1, 1]], "samples_per_axis": 3},
        "expressions": base, "bound_f": 1.0}})


XG = make_box_grid([-2], [2], [81])
YG = make_box_grid([-2], [2], [81])


def _bilinear(xs, ys, U, x, y):
    x = min(max(x, xs[0]), xs[-1])
    y = min(max(y, ys[0]), ys[-1])
    i = min(int((x - xs[0]) / (xs[1] - xs[0])), len(xs) - 2)
    j = min(int((y - ys[0]) / (ys[1] - ys[0])), len(ys) - 2)
    s = (x - xs[i]) / (xs[1] - xs[0])
    r = (y - ys[j]) / (ys[1] - ys[0])
    return ((1 - s) * (1 - r) * U[i, j] + s * (1 - r) * U[i + 1, j]
            + (1 - s) * r * U[i, j + 1] + s * r * U[i + 1, j + 1])


def _brute_force(problem, eps, xg, yg, T, dt):
    """Scalar-loop dynamic programming, independent of the vectorised stencils."""
    xs, ys = xg.axes()[0], yg.axes()[0]
    steps = math.ceil(T / dt - 1e-9)
    dt = T / steps
    U = np.array([[problem.u0(np.array([x]), np.array([y])) for y in ys] for x in xs])
    for _ in range(steps):
        new = np.empty_like(U)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                best = math.inf
                for a in problem.controls:
                    X, Y, A = np.array([x]), np.array([y]), a
                    f = float(problem.f(X, Y, A)[0])
                    g = float(problem.g(X, Y, A)[0])
                    ell = float(problem.ell(X, Y, A))
                    best = min(best, dt * ell + _bilinear(xs, ys, U, x + dt * f, y + dt * g / eps))
                new[i, j] = best
        U = new
    return U


def test_matches_brute_force_oracle():
    p = _custom(f=["a1*cos(y)"], ell="y**2 + 0.3*a1*x")
    xg, yg = make_box_grid([-1], [1], [7]), make_box_grid([-1], [1], [6])
    eps, T = 0.5, 0.3
    dt = 0.9 * cfl_dt(p, eps, xg, yg)
    V = solve_value_function(p, eps, xg, yg, T, dt)
    ref = _brute_force(p, eps, xg, yg, T, dt)
    assert np.allclose(V.slice_array(-1), ref, atol=1e-12)


def test_zero_horizon_is_terminal_cost(quadcell):
    V = solve_value_function(quadcell, 0.2, XG, YG, 0.0, 0.01)
    nodes = V.grid.nodes()
    assert np.array_equal(V.slices[0], quadcell.u0(nodes[:, :1], nodes[:, 1:]))
    assert len(V.slices) == 1


def test_constant_cost_gives_linear_growth():
    p = _custom(ell="0.7 + 0*y", u0="0*x")
    V = solve_value_function(p, 0.3, make_box_grid([-1], [1], [9]), make_box_grid([-1], [1], [9]),
                             0.4, 0.05)
    for t, s in zip(V.times, V.slices):
        assert np.allclose(s, 0.7 * t, atol=1e-12)


def test_quadcell_value_near_hopf_lax(quadcell):
    eps = 0.2
    V = solve_value_function(quadcell, eps, XG, YG, 0.5, cfl_dt(quadcell, eps, XG, YG))
    oracle = hopf_lax_oracle(1.0, 0.5, lambda z: z ** 2, 1.0)
    assert oracle == pytest.approx(0.25)
    assert abs(V.value_at([1.0], [0.0], 0.5) - oracle) <= 0.08


def test_cfl_violation_reports_ratio(quadcell):
    dt = 3 * cfl_dt(quadcell, 0.1, XG, YG)
    with pytest.raises(CFLError, match=r"CFL violated: dt\*speed/h = 2\.9\d* > 1"):
        solve_value_function(quadcell, 0.1, XG, YG, 0.5, dt)


@given(st.lists(st.integers(0, 100), min_size=8, max_size=8), st.integers(0, 2 ** 16))
def test_comparison_is_exact(levels, seed):
    p = builtin_problem("quadcell")
    xg, yg = make_box_grid([-1], [1], [9]), make_box_grid([-1], [1], [9])
    rng = np.random.default_rng(seed)
    nodes = xg.product(yg).nodes()
    base = p.u0(nodes[:, :1], nodes[:, 1:]) + rng.normal(size=len(nodes))
    bump = 0.01 * np.asarray(levels, float)[rng.integers(0, 8, size=len(nodes))]
    dt = cfl_dt(p, 0.3, xg, yg)
    Va = solve_value_function(p, 0.3, xg, yg, 0.3, dt, terminal=base)
    Vb = solve_value_function(p, 0.3, xg, yg, 0.3, dt, terminal=base + bump)
    assert np.all(Va.slices <= Vb.slices)


def test_lower_bound_and_coercivity(quadcell):
    eps = 0.2
    V = solve_value_function(quadcell, eps, XG, YG, 0.5, cfl_dt(quadcell, eps, XG, YG))
    p0, q0 = 0.0, quadcell.bound_f       # min of y^2 is 0
    for t, s in zip(V.times, V.slices):
        assert np.all(s >= p0 * t - q0)
    y = YG.nodes()[:, 0]
    shell = np.abs(y) >= 0.9 * 2
    core = np.abs(y) <= 1
    arr = V.slice_array(-1)
    assert np.all(arr[:, shell].min(axis=1) > arr[:, core].min(axis=1))


def test_y_oscillation_examples(quadcell):
    flat = _custom(u0="x**2")
    V = solve_value_function(flat, 0.3, XG, YG, 0.0, 0.01)
    assert np.all(y_oscillation(V, 0).values == 0)
    V = solve_value_function(quadcell, 0.3, XG, YG, 0.0, 0.01)
    assert np.allclose(y_oscillation(V, 0).values, 1 - np.exp(-1.0))


def test_y_oscillation_decreases_with_eps(quadcell):
    osc = []
    for eps in (0.4, 0.2, 0.1):
        V = solve_value_function(quadcell, eps, XG, YG, 0.5, cfl_dt(quadcell, eps, XG, YG))
        osc.append(y_oscillation(V, len(V.times) - 1)(np.array([0.0])))
    assert osc[0] > osc[1] > osc[2]


def test_trajectory_examples(quadcell):
    still = _custom(f=["0*a1"], g=["0*a2"], ell="1 + y**2")
    tr = simulate_trajectory(still, 0.1, ([0.2], [0.5]), [0] * 5, 0.1)
    assert np.allclose(tr.states, tr.states[0])
    assert tr.cost == pytest.approx(0.1 * 5 * 0.1 * 1.25)
    k = int(np.flatnonzero(np.all(quadcell.controls == [1, 1], axis=1))[0])
    tr = simulate_trajectory(quadcell, 0.1, ([0.3], [0.0]), [k] * 10, 0.1)
    assert tr.slow()[-1, 0] == pytest.approx(0.4, abs=1e-9)
    assert tr.fast()[-1, 0] == pytest.approx(1.0, abs=1e-9)


@given(st.lists(st.integers(0, 8), min_size=1, max_size=30), st.floats(0.01, 1.0),
       st.floats(-2, 2), st.floats(-2, 2))
def test_slow_drift_estimate(seq, eps, x0, y0):
    p = _custom(f=["a1*sin(x + 3*y)"])
    tr = simulate_trajectory(p, eps, ([x0], [y0]), seq, 0.05)
    drift = np.abs(tr.slow()[:, 0] - x0)
    assert np.all(drift <= eps * p.bound_f * tr.times + 1e-6)


def test_steering(quadcell):
    h = YG.spacing[0]
    tr = steer_fast(quadcell, 0.1, [0.0], [0.5], [0.5], 1.0, 0.01, h)
    assert tr.miss_distance <= h
    tr = steer_fast(quadcell, 0.05, [0.0], [1.0], [-1.0], 3.0, 0.01, h)
    assert tr.miss_distance <= 5 * 0.05 + 2 * h
    with pytest.raises(SteeringError, match="steering failed") as info:
        steer_fast(quadcell, 0.05, [0.0], [1.0], [-1.0], 1.0, 0.01, h)
    assert info.value.trajectory.miss_distance > 0.5
