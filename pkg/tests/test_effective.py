import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slowfast.cell import critical_value, freeze
from slowfast.effective import (EffectiveTable, GradientRangeError, hopf_lax_oracle,
                                limit_cfl_dt, read_table_csv, solve_limit, table_diagnostics,
                                tabulate_effective, write_limit_csv, write_table_csv)
from slowfast.grid import make_box_grid
from slowfast.hjb import CFLError
from slowfast.problem import bar_u0_many, builtin_problem, problem_from_config

Y81 = make_box_grid([-2], [2], [81])


def _synthetic(x_grid, p_grid, fn):
    xs, ps = x_grid.nodes(), p_grid.nodes()
    vals = np.array([[fn(x, p) for p in ps] for x in xs], dtype=float)
    zeros = np.zeros_like(vals)
    return EffectiveTable(x_grid, p_grid, vals, zeros, zeros + np.inf, {}, 1e-3)


def _abs_table(p_lo=-5.0, p_hi=5.0, n=21):
    return _synthetic(make_box_grid([-2], [2], [5]), make_box_grid([p_lo], [p_hi], [n]),
                      lambda x, p: abs(p[0]))


@pytest.fixture(scope="module")
def quad_table(quadcell):
    return tabulate_effective(quadcell, make_box_grid([-1], [1], [3]), make_box_grid([-2], [2], [9]),
                              Y81, 1e-3)


def test_table_matches_abs_p(quad_table):
    p = quad_table.p_grid.nodes()[:, 0]
    h = Y81.spacing[0]
    assert np.abs(quad_table.values - np.abs(p)).max() <= 2 * (1e-3 + h)
    assert np.all(np.abs(quad_table.values[:, p == 0]) <= 2 * (1e-3 + h ** 2))
    assert not quad_table.errors and np.isfinite(quad_table.values).all()


def test_entry_matches_direct_solve(quadcell):
    xg, pg = make_box_grid([0.0], [0.5], [2]), make_box_grid([0.3], [1.2], [2])
    table = tabulate_effective(quadcell, xg, pg, Y81, 1e-3)
    for i, x in enumerate(xg.nodes()):
        for j, p in enumerate(pg.nodes()):
            crit = critical_value(freeze(quadcell, x, p), Y81, 1e-3)
            assert table.values[i, j] == crit.c0
            assert table.bracket_width[i, j] == crit.bracket[1] - crit.bracket[0]


def test_parallel_equals_serial(quadcell):
    xg, pg = make_box_grid([-1], [1], [2]), make_box_grid([-1], [1], [3])
    a = tabulate_effective(quadcell, xg, pg, Y81, 1e-3, workers=1)
    b = tabulate_effective(quadcell, xg, pg, Y81, 1e-3, workers=2)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.gap_ratio, b.gap_ratio)


def test_failed_entries_are_recorded():
    one_sided = problem_from_config({"problem": {
        "name": "custom", "dims": {"N": 1, "M": 1},
        "control": {"bounds": [[-1, 1], [0, 1]], "samples_per_axis": 3},
        "expressions": {"f": ["a1"], "g": ["a2"], "ell": "y**2", "u0": "x**2"}, "bound_f": 1.0}})
    table = tabulate_effective(one_sided, make_box_grid([-1], [1], [2]), make_box_grid([-1], [1], [2]),
                               make_box_grid([-1], [1], [11]), 1e-3)
    assert table.failed.all() and len(table.errors) == 4
    assert "UnboundedSupport" in table.errors[(0, 0)]
    assert table_diagnostics(table)["failed_entries"] == sorted(table.errors)


def test_diagnostics(quad_table):
    d = table_diagnostics(quad_table)
    assert d["convexity_violation"] <= 2e-3 and d["max_bracket_width"] <= 1e-3
    const = _synthetic(make_box_grid([-1], [1], [5]), make_box_grid([-2], [2], [9]), lambda x, p: 3.0)
    d = table_diagnostics(const)
    assert d["convexity_violation"] == 0.0 and d["continuity_modulus"] == 0.0
    assert d["convexity_outliers"] == [] and d["continuity_outliers"] == []
    bad = _synthetic(const.x_grid, const.p_grid, lambda x, p: abs(p[0]))
    bad.values[2, 4] += 10.0
    d = table_diagnostics(bad)
    assert (2, 4) in d["convexity_outliers"]
    assert d["continuity_outliers"] == [(2, 4)]
    assert not d["convexity_ok"]


def test_table_homogeneity(quad_table):
    x = np.zeros((4, 1))
    p = np.array([[0.25], [0.5], [-0.75], [1.0]])
    one, two = quad_table.evaluate(x, p), quad_table.evaluate(x, 2 * p)
    assert np.allclose(two, 2 * one, atol=4 * (1e-3 + Y81.spacing[0] ** 2))


def test_table_csv_round_trip(quad_table, tmp_path):
    path = write_table_csv(quad_table, tmp_path / "table.csv")
    assert path.read_text().splitlines()[0] == "x,p,c0,bracket,gap_ratio"
    back = read_table_csv(path)
    assert np.array_equal(back.values, quad_table.values)
    assert np.array_equal(back.bracket_width, quad_table.bracket_width)
    assert back.x_grid == quad_table.x_grid and back.p_grid == quad_table.p_grid


def test_hopf_lax_examples():
    assert hopf_lax_oracle(1.0, 0.5, lambda z: z ** 2, 1.0) == pytest.approx(0.25)
    assert hopf_lax_oracle(0.7, 0.0, lambda z: z ** 2, 1.0) == pytest.approx(0.49)
    assert hopf_lax_oracle(0.3, 2.0, lambda z: 4.0 + 0 * z, 1.0) == 4.0
    with pytest.raises(ValueError):
        hopf_lax_oracle(0.0, -1.0, lambda z: z, 1.0)


def test_limit_zero_hamiltonian(quadcell):
    xg = make_box_grid([-2], [2], [41])
    zero = _synthetic(xg, make_box_grid([-5], [5], [11]), lambda x, p: 0.0)
    sol = solve_limit(quadcell, zero, xg, Y81, 0.5, 0.01)
    u0 = bar_u0_many(quadcell, xg.nodes(), Y81)
    # clamped ghosts leave the discrete diffusion active, so compare with u0 on the same grid
    assert np.array_equal(sol.slices[0], u0)
    flat = solve_limit(quadcell, _synthetic(xg, zero.p_grid, lambda x, p: 0.0), xg, Y81, 0.5, 0.01,
                       initial=np.full(xg.n_nodes, 1.5))
    assert np.all(flat.slices == 1.5)
    lin = solve_limit(quadcell, zero, xg, Y81, 0.5, 0.01, initial=xg.nodes()[:, 0])
    assert np.allclose(lin.slices[-1][1:-1], xg.nodes()[1:-1, 0])


def test_limit_zero_horizon(quadcell):
    xg = make_box_grid([-2], [2], [41])
    sol = solve_limit(quadcell, _abs_table(), xg, Y81, 0.0, 0.01)
    assert len(sol.slices) == 1
    assert np.array_equal(sol.slices[0], bar_u0_many(quadcell, xg.nodes(), Y81))


def test_limit_against_hopf_lax(quadcell):
    xg = make_box_grid([-2], [2], [161])
    table = _abs_table()
    sol = solve_limit(quadcell, table, xg, Y81, 0.5, limit_cfl_dt(table, xg))
    assert sol.value_at([1.0], 0.5)[0] == pytest.approx(0.25, abs=0.03)


def test_limit_error_decreases_under_refinement(quadcell):
    table = _abs_table()
    errs = []
    for n in (41, 81, 161):
        xg = make_box_grid([-2], [2], [n])
        yg = make_box_grid([-2], [2], [n])
        sol = solve_limit(quadcell, table, xg, yg, 0.5, limit_cfl_dt(table, xg))
        x = xg.nodes()[:, 0]
        core = np.abs(x) <= 1.5
        err = 0.0
        for t in (0.25, 0.5):
            exact = np.maximum(np.abs(x[core]) - t, 0.0) ** 2
            err = max(err, np.abs(sol.at_time(t)[core] - exact).max())
        errs.append(err)
    assert errs[0] > errs[1] > errs[2]


def test_limit_errors(quadcell):
    xg = make_box_grid([-2], [2], [81])
    table = _abs_table()
    with pytest.raises(CFLError, match="CFL violated"):
        solve_limit(quadcell, table, xg, Y81, 0.5, 3 * limit_cfl_dt(table, xg))
    narrow = _abs_table(-0.5, 0.5, 5)
    with pytest.raises(GradientRangeError, match="leaves the table p-range"):
        solve_limit(quadcell, narrow, xg, Y81, 0.5, limit_cfl_dt(narrow, xg))


@given(st.lists(st.integers(0, 100), min_size=6, max_size=6), st.integers(0, 2 ** 16))
def test_limit_monotone(levels, seed):
    p = builtin_problem("quadcell")
    xg = make_box_grid([-2], [2], [41])
    table = _abs_table(-20.0, 20.0, 41)
    rng = np.random.default_rng(seed)
    base = xg.nodes()[:, 0] ** 2 + 0.02 * rng.uniform(-1, 1, size=xg.n_nodes)
    bump = 0.01 * np.asarray(levels, float)[rng.integers(0, 6, size=xg.n_nodes)]
    dt = limit_cfl_dt(table, xg)
    a = solve_limit(p, table, xg, Y81, 0.3, dt, initial=base)
    b = solve_limit(p, table, xg, Y81, 0.3, dt, initial=base + bump)
    assert np.all(a.slices <= b.slices)


def test_limit_csv(quadcell, tmp_path):
    xg = make_box_grid([-2], [2], [21])
    sol = solve_limit(quadcell, _abs_table(), xg, Y81, 0.2, 0.05)
    lines = write_limit_csv(sol, tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x,t,u"
    assert len(lines) == 1 + xg.n_nodes * len(sol.times)
