"""Control problems, benchmark instances, config loading and assumption audits.

All problem maps are vectorised over leading axes: ``x`` has shape (..., N),
``y`` (..., M) and a control ``a`` (..., K).  ``f`` returns (..., N), ``g``
(..., M), ``ell`` and ``u0`` return (...).
"""

from __future__ import annotations

import ast
import itertools
import json
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .grid import BoxGrid


class ProblemError(ValueError):
    pass


# ---------------------------------------------------------------- expressions

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _nary(fn):
    def call(*args):
        if not args:
            raise ProblemError("min/max need at least one argument")
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return call


_FUNCS: dict[str, Callable] = {
    "abs": np.abs,
    "exp": np.exp,
    "cos": np.cos,
    "sin": np.sin,
    "sqrt": np.sqrt,
    "log": np.log,
    "min": _nary(np.minimum),
    "max": _nary(np.maximum),
}
_CONSTS = {"pi": math.pi, "e": math.e}


class Expression:
    """Arithmetic expression over named variables, evaluated with numpy.

    Only numbers, variable names, ``+ - * / **``, unary signs and the calls
    abs, exp, cos, sin, sqrt, log, min, max are accepted.  Instances keep only
    the source text, so they pickle cleanly for process pools.
    """

    def __init__(self, source: str, variables: Sequence[str]):
        self.source = str(source)
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ProblemError(f"malformed expression {self.source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ProblemError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNOPS:
                raise ProblemError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ProblemError(f"call not allowed in {self.source!r}")
            for arg in node.args:
                self._check(arg)
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in _CONSTS:
                raise ProblemError(f"unknown variable {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ProblemError(f"bad constant in {self.source!r}")
        else:
            raise ProblemError(f"unsupported syntax in {self.source!r}")

    def __getstate__(self):
        return {"source": self.source, "variables": self.variables}

    def __setstate__(self, state):
        self.__init__(state["source"], state["variables"])

    def evaluate(self, env: dict[str, Any]):
        def ev(node):
            if isinstance(node, ast.BinOp):
                return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
            if isinstance(node, ast.UnaryOp):
                return _UNOPS[type(node.op)](ev(node.operand))
            if isinstance(node, ast.Call):
                return _FUNCS[node.func.id](*[ev(a) for a in node.args])
            if isinstance(node, ast.Name):
                return env[node.id] if node.id in env else _CONSTS[node.id]
            return float(node.value)

        with np.errstate(all="ignore"):
            return ev(self._tree)


def _env(n: int, m: int, k: int, x, y, a=None) -> dict[str, Any]:
    env = {}
    for prefix, arr, dim in (("x", x, n), ("y", y, m), ("a", a, k)):
        if arr is None:
            continue
        arr = np.asarray(arr, dtype=float)
        for i in range(dim):
            env[f"{prefix}{i + 1}"] = arr[..., i]
        if dim == 1:
            env[prefix] = arr[..., 0]
    return env


def _names(n: int, m: int, k: int, with_controls: bool = True) -> list[str]:
    names = [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(m)]
    names += ["x"] * (n == 1) + ["y"] * (m == 1)
    if with_controls:
        names += [f"a{i + 1}" for i in range(k)] + ["a"] * (k == 1)
    return names


class VectorMap:
    """(x, y, a) -> R^d built from one expression per component."""

    def __init__(self, sources: Sequence[str], dims: tuple[int, int, int]):
        self.dims = dims
        names = _names(*dims)
        self.components = [Expression(s, names) for s in sources]

    def __call__(self, x, y, a):
        env = _env(*self.dims, x, y, a)
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1], np.shape(a)[:-1])
        cols = [np.broadcast_to(np.asarray(c.evaluate(env), float), shape) for c in self.components]
        return np.stack(cols, axis=-1)


class ScalarMap:
    """(x, y[, a]) -> R from one expression."""

    def __init__(self, source: str, dims: tuple[int, int, int], with_controls: bool = True):
        self.dims = dims
        self.with_controls = with_controls
        self.expr = Expression(source, _names(*dims, with_controls=with_controls))

    def __call__(self, x, y, a=None):
        env = _env(*self.dims, x, y, a if self.with_controls else None)
        shapes = [np.shape(x)[:-1], np.shape(y)[:-1]]
        if self.with_controls:
            shapes.append(np.shape(a)[:-1])
        return np.broadcast_to(np.asarray(self.expr.evaluate(env), float),
                               np.broadcast_shapes(*shapes)).copy()


# ------------------------------------------------------------------- problems

@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Slow/fast optimal control problem with a finite control sample.

    ``bound_f`` is Q0: a bound for |f| that also serves as -Q0 lower bound of
    the terminal cost.  ``hopf_lax_speed`` is set only for instances whose
    effective Hamiltonian is known to be ``speed * |p|``.
    """

    name: str
    dim_slow: int
    dim_fast: int
    controls: np.ndarray
    drift_slow: Callable
    drift_fast: Callable
    running_cost: Callable
    terminal_cost: Callable
    bound_f: float
    lipschitz: float = 0.0
    hopf_lax_speed: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ctrl = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if ctrl.size == 0 or ctrl.shape[0] == 0:
            raise ProblemError("empty control set")
        object.__setattr__(self, "controls", ctrl)
        if self.dim_slow < 1 or self.dim_fast < 1:
            raise ProblemError("dimensions must be positive")
        if self.dim_fast > 3:
            raise ProblemError("fast dimension above 3 is not supported")

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    def f(self, x, y, a):
        return self.drift_slow(x, y, a)

    def g(self, x, y, a):
        return self.drift_fast(x, y, a)

    def ell(self, x, y, a):
        return self.running_cost(x, y, a)

    def u0(self, x, y):
        return self.terminal_cost(x, y)

    def all_controls(self, x, y):
        """Evaluate f, g, ell at points (P, .) for every control -> (P, K, .)."""
        x = np.atleast_2d(np.asarray(x, float))
        y = np.atleast_2d(np.asarray(y, float))
        xs, ys = x[:, None, :], y[:, None, :]
        a = self.controls[None, :, :]
        return self.f(xs, ys, a), self.g(xs, ys, a), self.ell(xs, ys, a)


def control_samples(bounds: Sequence[Sequence[float]], per_axis: int) -> np.ndarray:
    """Cartesian lattice of control samples including the box vertices."""
    per_axis = int(per_axis)
    if per_axis <= 0:
        raise ProblemError("empty control set")
    axes = []
    for lo, hi in bounds:
        if per_axis == 1:
            axes.append(np.array([0.5 * (lo + hi)]))
        else:
            axes.append(np.linspace(lo, hi, per_axis))
    return np.array(list(itertools.product(*axes)), dtype=float)


def _quad_f(x, y, a):
    return np.broadcast_to(a[..., :1], np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1], np.shape(a)[:-1]) + (1,))


def _quad_g(x, y, a):
    m = np.shape(y)[-1]
    return np.broadcast_to(a[..., 1:1 + m], np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1], np.shape(a)[:-1]) + (m,))


def _quad_ell(x, y, a):
    r2 = np.sum(np.asarray(y) ** 2, axis=-1)
    return np.broadcast_to(r2, np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1], np.shape(a)[:-1])).copy()


def _quad_u0(x, y):
    x2 = np.sum(np.asarray(x) ** 2, axis=-1)
    y2 = np.sum(np.asarray(y) ** 2, axis=-1)
    return x2 + 1.0 - np.exp(-y2)


BUILTINS = ("quadcell", "quadcell2d")


def builtin_problem(name: str, samples_per_axis: int = 5) -> ControlProblem:
    """Benchmark instances with closed-form cell quantities.

    quadcell: N=M=1, A=[-1,1]^2, f=a1, g=a2, ell=y^2, u0=x^2+1-exp(-y^2).
    quadcell2d: N=1, M=2, A=[-1,1]^3, g=(a2,a3), ell=|y|^2.
    Both have effective Hamiltonian |p|.
    """
    if name == "quadcell":
        m = 1
    elif name == "quadcell2d":
        m = 2
    else:
        raise ProblemError(f"unknown name {name!r}")
    controls = control_samples([(-1.0, 1.0)] * (1 + m), samples_per_axis)
    return ControlProblem(
        name=name, dim_slow=1, dim_fast=m, controls=controls,
        drift_slow=_quad_f, drift_fast=_quad_g, running_cost=_quad_ell,
        terminal_cost=_quad_u0, bound_f=1.0, lipschitz=0.0, hopf_lax_speed=1.0,
    )


def _as_list(v) -> list[str]:
    if isinstance(v, str):
        return [v]
    return [str(s) for s in v]


def problem_from_config(cfg: dict) -> ControlProblem:
    if not isinstance(cfg, dict) or "problem" not in cfg or not isinstance(cfg["problem"], dict):
        raise ProblemError("malformed config: missing 'problem' section")
    p = cfg["problem"]
    control = p.get("control", {}) or {}
    if "expressions" not in p:
        if "name" not in p:
            raise ProblemError("malformed config: need problem.name or problem.expressions")
        return builtin_problem(str(p["name"]), int(control.get("samples_per_axis", 5)))

    try:
        dims = p["dims"]
        n, m = int(dims["N"]), int(dims["M"])
        bounds = [tuple(map(float, b)) for b in control["bounds"]]
        per_axis = int(control["samples_per_axis"])
        ex = p["expressions"]
        f_src, g_src = _as_list(ex["f"]), _as_list(ex["g"])
        ell_src, u0_src = str(ex["ell"]), str(ex["u0"])
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"malformed config: {exc}") from None
    if m > 3:
        raise ProblemError("fast dimension above 3 is not supported")
    if len(f_src) != n or len(g_src) != m:
        raise ProblemError(f"dimension mismatch: f has {len(f_src)} components for N={n}, "
                           f"g has {len(g_src)} for M={m}")
    k = len(bounds)
    controls = control_samples(bounds, per_axis)
    dims3 = (n, m, k)
    f = VectorMap(f_src, dims3)
    g = VectorMap(g_src, dims3)
    ell = ScalarMap(ell_src, dims3)
    u0 = ScalarMap(u0_src, dims3, with_controls=False)

    q0 = p.get("bound_f")
    if q0 is None:
        # sup|f| over a default audit box; override with problem.bound_f
        pts = np.array(list(itertools.product(np.linspace(-2, 2, 5), repeat=n + m)))
        vals = f(pts[:, None, :n], pts[:, None, n:], controls[None])
        q0 = float(np.max(np.linalg.norm(vals, axis=-1)))
    return ControlProblem(
        name=str(p.get("name", "custom")), dim_slow=n, dim_fast=m, controls=controls,
        drift_slow=f, drift_fast=g, running_cost=ell, terminal_cost=u0,
        bound_f=float(q0), lipschitz=float(p.get("lipschitz", 0.0)),
        hopf_lax_speed=p.get("hopf_lax_speed"),
        meta={"expressions": {"f": f_src, "g": g_src, "ell": ell_src, "u0": u0_src}},
    )


def load_problem(config) -> ControlProblem:
    """Build a problem from a dict, a YAML/JSON file path, or a builtin name."""
    if isinstance(config, ControlProblem):
        return config
    if isinstance(config, dict):
        return problem_from_config(config)
    text = str(config)
    if text in BUILTINS:
        return builtin_problem(text)
    path = Path(text)
    if not path.exists():
        raise ProblemError(f"unknown name {text!r} (not a builtin and no such file)")
    raw = path.read_text()
    try:
        data = json.loads(raw) if path.suffix == ".json" else yaml.safe_load(raw)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ProblemError(f"malformed config: {exc}") from None
    return problem_from_config(data)


# --------------------------------------------------------------------- audits

def hull_radius(points: np.ndarray) -> float:
    """Radius of the largest origin-centred ball inside conv(points); 0 if none."""
    pts = np.atleast_2d(np.asarray(points, float))
    m = pts.shape[1]
    if m == 1:
        return float(max(0.0, min(pts.max(), -pts.min())))
    if m == 2:
        hull = _monotone_chain(pts)
        if len(hull) < 3:
            return 0.0
        r = np.inf
        for p, q in zip(hull, np.roll(hull, -1, axis=0)):
            edge = q - p
            # counter-clockwise hull: signed distance of the origin to the edge line
            d = (edge[0] * (-p[1]) - edge[1] * (-p[0])) / np.hypot(*edge)
            r = min(r, d)
        return float(max(r, 0.0))
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(pts)
    except QhullError:
        return 0.0
    # equations: n.x + c <= 0 inside, with unit normals
    return float(max(0.0, np.min(-hull.equations[:, -1])))


def _monotone_chain(pts: np.ndarray) -> np.ndarray:
    pts = np.unique(pts, axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


@dataclass
class AssumptionReport:
    box: tuple
    q0_observed: float
    lipschitz_observed: float
    controllability_radius: float
    coercivity_profile: list[tuple[float, float]]
    u0_lower_bound_ok: bool
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "box": [list(b) for b in self.box],
            "q0_observed": self.q0_observed,
            "lipschitz_observed": self.lipschitz_observed,
            "controllability_radius": self.controllability_radius,
            "coercivity_profile": [list(p) for p in self.coercivity_profile],
            "u0_lower_bound_ok": self.u0_lower_bound_ok,
            "failures": list(self.failures),
            "ok": self.ok,
        }


def check_assumptions(problem: ControlProblem, box, samples: int) -> AssumptionReport:
    """Audit boundedness, Lipschitz, controllability and coercivity on samples.

    ``box`` is a sequence of (lo, hi) pairs, slow axes first then fast axes.
    """
    n, m = problem.dim_slow, problem.dim_fast
    box = tuple(tuple(map(float, b)) for b in box)
    if len(box) != n + m:
        raise ProblemError(f"box needs {n + m} intervals")
    if samples < 2:
        raise ProblemError("need samples >= 2")
    if any(not lo < hi for lo, hi in box):
        raise ProblemError("degenerate audit box")

    axes = [np.linspace(lo, hi, samples) for lo, hi in box]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)   # (s,...,s, n+m)
    pts = mesh.reshape(-1, n + m)
    f, g, ell = problem.all_controls(pts[:, :n], pts[:, n:])
    u0 = problem.u0(pts[:, :n], pts[:, n:])

    q0_obs = float(np.max(np.linalg.norm(f, axis=-1)))

    # difference quotients between axis neighbours
    shape = (samples,) * (n + m)
    fg = np.concatenate([f, g], axis=-1).reshape(shape + f.shape[1:2] + (n + m,))
    lip = 0.0
    for k in range(n + m):
        h = (box[k][1] - box[k][0]) / (samples - 1)
        diff = np.diff(fg, axis=k)
        lip = max(lip, float(np.max(np.linalg.norm(diff, axis=-1))) / h)

    radius = min(hull_radius(gp) for gp in g)

    rad_y = np.round(np.linalg.norm(pts[:, n:], axis=-1), 12)
    min_ell = ell.min(axis=1)
    profile = [(float(r), float(min_ell[rad_y == r].min())) for r in np.unique(rad_y)]

    u0_ok = bool(np.all(u0 >= -problem.bound_f))
    failures = []
    if radius <= 0:
        failures.append("controllability radius is zero")
    if not u0_ok:
        failures.append("terminal cost below -Q0")
    if q0_obs > problem.bound_f * (1 + 1e-12):
        failures.append(f"|f| reaches {q0_obs} above Q0={problem.bound_f}")
    return AssumptionReport(box, q0_obs, lip, float(radius), profile, u0_ok, failures)


def bar_u0(problem: ControlProblem, x, y_grid: BoxGrid) -> float:
    """Discrete lower envelope min_y u0(x, y) over the nodes of ``y_grid``."""
    ys = y_grid.nodes()
    xs = np.broadcast_to(np.asarray(x, float).reshape(1, -1), (ys.shape[0], problem.dim_slow))
    return float(np.min(problem.u0(xs, ys)))


def bar_u0_many(problem: ControlProblem, xs: np.ndarray, y_grid: BoxGrid) -> np.ndarray:
    ys = y_grid.nodes()
    xs = np.atleast_2d(xs)
    vals = problem.u0(xs[:, None, :], ys[None, :, :])
    return vals.min(axis=1)
