"""Convergence experiments: eps-ladder of value functions against the limit solution."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .effective import (LimitSolution, hopf_lax_oracle, limit_cfl_dt, solve_limit,
                        tabulate_effective, table_diagnostics)
from .grid import BoxGrid, make_box_grid
from .hjb import cfl_dt, solve_value_function
from .problem import BUILTINS, ControlProblem, bar_u0_many


class HarnessError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass
class Thresholds:
    final_error: float = 0.1
    final_oscillation: float = 0.1
    layer_upper: float = 0.15
    layer_lower: float = 0.05


@dataclass
class ProbeSet:
    x_radius: float = 1.2
    y_radius: float = 1.0
    core_fraction: float = 0.5


@dataclass
class ConvergenceReport:
    problem: str
    mode: str                          # "verified" or "informative"
    grids: dict
    eps_list: list[float]
    T: float
    t_min: float
    t_layer: float
    interior_error: list[dict]
    oscillation: list[dict]
    layer: dict
    table: dict
    limit: dict
    criteria: dict
    thresholds: dict
    passed: bool | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), sort_keys=True, indent=2) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _grid_dict(g: BoxGrid) -> dict:
    return {"lower": list(g.lower), "upper": list(g.upper), "resolution": list(g.resolution)}


def lower_envelope(values: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Nodewise min over the 3^N neighbourhood (iterated once)."""
    arr = values.reshape(shape)
    pad = np.pad(arr, 1, mode="edge")
    out = arr.copy()
    for off in np.ndindex(*(3,) * arr.ndim):
        sl = tuple(slice(o, o + n) for o, n in zip(off, shape))
        np.minimum(out, pad[sl], out=out)
    return out.ravel()


def _strictly_decreasing(vals: list[float]) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


def _eps_run(args):
    (problem, eps, x_grid, y_grid, T, t_min, t_layer, probe, limit, u0bar, u0sharp,
     lip_u0, p_floor, oracle) = args
    dt = cfl_dt(problem, eps, x_grid, y_grid)
    V = solve_value_function(problem, eps, x_grid, y_grid, T, dt)
    xs, ys = x_grid.nodes(), y_grid.nodes()
    px = np.all(np.abs(xs) <= probe.x_radius + 1e-12, axis=1)
    py = np.all(np.abs(ys) <= probe.y_radius + 1e-12, axis=1)
    lo, hi = np.asarray(y_grid.lower), np.asarray(y_grid.upper)
    centre, half = 0.5 * (lo + hi), 0.5 * probe.core_fraction * (hi - lo)
    core = np.all(np.abs(ys - centre) <= half + 1e-12, axis=1)
    nx = x_grid.n_nodes

    sup_err, oracle_err = 0.0, math.nan
    inside = [k for k, t in enumerate(V.times) if t >= t_min - 1e-12]
    for k in inside:
        t = V.times[k]
        arr = V.slices[k].reshape(nx, -1)[np.ix_(px, py)]
        u = limit.at_time(t)[px]
        sup_err = max(sup_err, float(np.abs(arr - u[:, None]).max()))
    if oracle is not None:
        oracle_err = 0.0
        for t in (t_min, 0.5 * (t_min + T), T):
            arr = V.at_time(t).reshape(nx, -1)[np.ix_(px, py)]
            exact = np.array([oracle(x, t) for x in xs[px, 0]])
            oracle_err = max(oracle_err, float(np.abs(arr - exact[:, None]).max()))

    osc = []
    for t in (0.5 * T, T):
        arr = V.at_time(t).reshape(nx, -1)[np.ix_(px, core)]
        osc.append({"eps": eps, "t": t, "max_osc": float((arr.max(axis=1) - arr.min(axis=1)).max())})

    at_layer = V.at_time(t_layer).reshape(nx, -1)[np.ix_(px, py)]
    upper_margin = float((at_layer - u0bar[px][:, None]).max())
    lower_margin = math.inf
    for k, t in enumerate(V.times):
        if 0 < t <= t_layer + 1e-12:
            arr = V.slices[k].reshape(nx, -1)[np.ix_(px, py)]
            bound = u0sharp[px] - lip_u0 * problem.bound_f * t + min(p_floor, 0.0) * t
            lower_margin = min(lower_margin, float((arr - bound[:, None]).min()))
    return {
        "eps": eps, "dt": V.dt, "steps": len(V.times) - 1, "sup_err": sup_err,
        "oracle_err": oracle_err, "oscillation": osc,
        "upper_margin": upper_margin, "lower_margin": lower_margin,
    }


def run_convergence(problem: ControlProblem, eps_list, grids: tuple[BoxGrid, BoxGrid, BoxGrid],
                    T: float, t_min: float, tol: float = 1e-3, table_x_nodes: int = 5,
                    probe: ProbeSet | None = None, thresholds: Thresholds | None = None,
                    workers: int = 1) -> ConvergenceReport:
    """tabulate -> limit solve -> V^eps per eps -> interior, oscillation and layer checks."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list) or not _strictly_decreasing(eps_list):
        raise ValueError("eps_list must be positive and strictly decreasing")
    if not 0 < t_min <= T:
        raise ValueError("need 0 < t_min <= T")
    probe = probe or ProbeSet()
    thresholds = thresholds or Thresholds()
    x_grid, y_grid, p_grid = grids
    t_layer = 2.0 * eps_list[-1]

    table_x = make_box_grid(x_grid.lower, x_grid.upper, table_x_nodes)
    try:
        table = tabulate_effective(problem, table_x, p_grid, y_grid, tol, workers=workers)
        if table.errors:
            first = next(iter(sorted(table.errors.items())))
            raise RuntimeError(f"{len(table.errors)} failed entries, first {first}")
        diag = table_diagnostics(table)
    except Exception as exc:
        raise HarnessError("tabulate", exc) from exc
    try:
        limit: LimitSolution = solve_limit(problem, table, x_grid, y_grid, T,
                                           limit_cfl_dt(table, x_grid))
    except Exception as exc:
        raise HarnessError("limit", exc) from exc

    xs = x_grid.nodes()
    u0bar = bar_u0_many(problem, xs, y_grid)
    u0sharp = lower_envelope(u0bar, x_grid.shape)
    lip_u0 = max(float(np.abs(np.diff(u0bar.reshape(x_grid.shape), axis=k)).max() / x_grid.spacing[k])
                 for k in range(x_grid.ndim))
    both = x_grid.product(y_grid).nodes()
    p_floor = float(problem.all_controls(both[:, :problem.dim_slow], both[:, problem.dim_slow:])[2].min())
    oracle = None
    limit_oracle_err = math.nan
    if problem.hopf_lax_speed is not None and problem.dim_slow == 1:
        oracle = _HopfLax(problem, y_grid)
        px = np.abs(xs[:, 0]) <= probe.x_radius + 1e-12
        limit_oracle_err = max(
            float(np.abs(limit.at_time(t)[px] - np.array([oracle(x, t) for x in xs[px, 0]])).max())
            for t in (t_min, T))

    jobs = [(problem, e, x_grid, y_grid, T, t_min, t_layer, probe, limit, u0bar, u0sharp,
             lip_u0, p_floor, oracle) for e in eps_list]
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
                runs = list(pool.map(_eps_run, jobs))
        else:
            runs = [_eps_run(j) for j in jobs]
    except Exception as exc:
        raise HarnessError("value-function", exc) from exc

    errors = [r["sup_err"] for r in runs]
    osc_T = [r["oscillation"][-1]["max_osc"] for r in runs]
    last = runs[-1]
    criteria = {
        "interior_error_final": {"value": errors[-1], "threshold": thresholds.final_error,
                                 "ok": errors[-1] <= thresholds.final_error},
        "oscillation_final": {"value": osc_T[-1], "threshold": thresholds.final_oscillation,
                              "ok": osc_T[-1] <= thresholds.final_oscillation},
        "layer_upper": {"value": last["upper_margin"], "threshold": thresholds.layer_upper,
                        "ok": last["upper_margin"] <= thresholds.layer_upper},
        "layer_lower": {"value": last["lower_margin"], "threshold": -thresholds.layer_lower,
                        "ok": last["lower_margin"] >= -thresholds.layer_lower},
    }
    if len(runs) > 1:
        criteria["interior_error_decreasing"] = {"value": errors, "ok": _strictly_decreasing(errors)}
        criteria["oscillation_decreasing"] = {"value": osc_T, "ok": _strictly_decreasing(osc_T)}
    verified = problem.name in BUILTINS or problem.hopf_lax_speed is not None
    passed = all(c["ok"] for c in criteria.values()) if verified else None

    return ConvergenceReport(
        problem=problem.name,
        mode="verified" if verified else "informative",
        grids={"x": _grid_dict(x_grid), "y": _grid_dict(y_grid), "p": _grid_dict(p_grid),
               "table_x": _grid_dict(table_x)},
        eps_list=eps_list, T=float(T), t_min=float(t_min), t_layer=t_layer,
        interior_error=[{"eps": r["eps"], "sup_err": r["sup_err"], "oracle_err": r["oracle_err"],
                         "dt": r["dt"], "steps": r["steps"]} for r in runs],
        oscillation=[o for r in runs for o in r["oscillation"]],
        layer={"t_layer": t_layer, "upper_ok": criteria["layer_upper"]["ok"],
               "lower_ok": criteria["layer_lower"]["ok"],
               "margins": [{"eps": r["eps"], "upper": r["upper_margin"], "lower": r["lower_margin"]}
                           for r in runs],
               "lipschitz_u0": lip_u0, "running_cost_floor": p_floor},
        table={k: v for k, v in diag.items() if not k.endswith("outliers") and k != "failed_entries"},
        limit={"dt": limit.dt, "dissipation": limit.scheme_dissipation.tolist(),
               "oracle_err": limit_oracle_err},
        criteria=criteria,
        thresholds=asdict(thresholds),
        passed=passed,
    )


@dataclass
class _HopfLax:
    """Hopf-Lax formula for speed*|p| with the discrete initial datum; picklable."""
    problem: ControlProblem
    y_grid: BoxGrid
    samples: int = 10_000
    _cache: dict = field(default_factory=dict, repr=False)

    def u0bar(self, z):
        return bar_u0_many(self.problem, np.asarray(z, float).reshape(-1, 1), self.y_grid)

    def __call__(self, x, t):
        key = (float(x), float(t))
        if key not in self._cache:
            self._cache[key] = hopf_lax_oracle(float(x), float(t), self.u0bar,
                                               self.problem.hopf_lax_speed, self.samples)
        return self._cache[key]
