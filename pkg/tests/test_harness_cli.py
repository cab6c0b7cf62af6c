import csv
import json

import numpy as np
import pytest
import yaml

from slowfast.cli import FAILED, OK, USAGE, cli_main, parse_grid
from slowfast.grid import make_box_grid
from slowfast.harness import HarnessError, Thresholds, lower_envelope, run_convergence
from slowfast.problem import problem_from_config

SMALL = (make_box_grid([-2], [2], [21]), make_box_grid([-2], [2], [21]),
         make_box_grid([-5], [5], [11]))

CUSTOM = {"problem": {
    "name": "drifted", "dims": {"N": 1, "M": 1},
    "control": {"bounds": [[-1, 1], [-1, 1]], "samples_per_axis": 3},
    "expressions": {"f": ["a1"], "g": ["a2"], "ell": "y**2 + 0.2*x*a1", "u0": "x**2"},
    "bound_f": 1.0}}


@pytest.fixture(scope="module")
def small_report(quadcell):
    return run_convergence(quadcell, [0.4, 0.2], SMALL, 0.3, 0.1)


def test_lower_envelope():
    vals = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0])
    assert np.array_equal(lower_envelope(vals, (6,)), [1, 1, 1, 1, 1, 5])
    grid = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(lower_envelope(grid.ravel(), (3, 3)), [0, 0, 1, 0, 0, 1, 3, 3, 4])


def test_report_schema(small_report):
    d = json.loads(small_report.to_json())
    assert d["mode"] == "verified" and d["pass"] in (True, False)
    assert d["eps_list"] == [0.4, 0.2] and d["t_layer"] == pytest.approx(0.4)
    for name, c in d["criteria"].items():
        assert "ok" in c and "value" in c
        if name in ("interior_error_final", "oscillation_final", "layer_upper", "layer_lower"):
            assert "threshold" in c
    assert d["thresholds"] == {"final_error": 0.1, "final_oscillation": 0.1,
                               "layer_upper": 0.15, "layer_lower": 0.05}
    assert [r["eps"] for r in d["interior_error"]] == [0.4, 0.2]
    assert d["limit"]["oracle_err"] < 0.05


def test_single_eps_and_thresholds(quadcell):
    rep = run_convergence(quadcell, [0.4], SMALL, 0.3, 0.1,
                          thresholds=Thresholds(final_error=1e-9))
    assert "interior_error_decreasing" not in rep.criteria
    assert rep.criteria["interior_error_final"]["threshold"] == 1e-9
    assert rep.passed is False


@pytest.mark.parametrize("eps", [[], [0.1, 0.2], [0.2, 0.2], [0.2, -0.1]])
def test_eps_validation(quadcell, eps):
    with pytest.raises(ValueError, match="strictly decreasing"):
        run_convergence(quadcell, eps, SMALL, 0.3, 0.1)


def test_time_validation(quadcell):
    with pytest.raises(ValueError):
        run_convergence(quadcell, [0.4], SMALL, 0.3, 0.5)


def test_harness_stage_errors(quadcell):
    narrow = (SMALL[0], SMALL[1], make_box_grid([-0.5], [0.5], [5]))
    with pytest.raises(HarnessError) as info:
        run_convergence(quadcell, [0.4], narrow, 0.3, 0.1)
    assert info.value.stage == "limit"


def test_informative_mode():
    problem = problem_from_config(CUSTOM)
    rep = run_convergence(problem, [0.4], SMALL, 0.3, 0.1)
    assert rep.mode == "informative" and rep.passed is None
    assert json.loads(rep.to_json())["pass"] is None


# ---------------------------------------------------------------- CLI

def test_parse_grid():
    g = parse_grid("-1,1,5;0,2,3", 2)
    assert g.shape == (5, 3)
    assert parse_grid("-1,1,5", 2).shape == (5, 5)
    with pytest.raises(ValueError, match="need 2"):
        parse_grid("-1,1,5;0,1,3;0,1,3", 2)
    with pytest.raises(ValueError, match="expected a,b,n"):
        parse_grid("-1,1", 1)


def test_cli_usage_errors(tmp_path):
    assert cli_main([]) == USAGE
    assert cli_main(["cell", "--problem", "quadcell"]) == USAGE
    assert cli_main(["cell", "--problem", "nosuch", "--cell", "0:0", "--ygrid", "-1,1,5"]) == USAGE
    assert cli_main(["cell", "--problem", "quadcell", "--cell", "0,1:0", "--ygrid", "-1,1,5"]) == USAGE
    assert cli_main(["converge", "--problem", "quadcell", "--eps", "0.1,0.2",
                     "--out-dir", str(tmp_path)]) == USAGE
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"problem": {**CUSTOM["problem"],
                                               "expressions": {**CUSTOM["problem"]["expressions"],
                                                               "ell": "__import__('os')"}}}))
    assert cli_main(["audit", "--problem", str(bad)]) == USAGE
    assert cli_main(["solve-eps", "--problem", "quadcell", "--eps", "0.1", "--xgrid", "-1,1,11",
                     "--ygrid", "-1,1,11", "--T", "0.1", "--dt", "1.0",
                     "--out", str(tmp_path / "v.csv")]) == USAGE


def test_cli_audit(tmp_path):
    out = tmp_path / "audit.json"
    assert cli_main(["audit", "--problem", "quadcell", "--out", str(out)]) == OK
    assert json.loads(out.read_text())
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps(CUSTOM))
    assert cli_main(["audit", "--problem", str(cfg), "--box", "-1,1"]) in (OK, FAILED)


def test_cli_cell_and_verify(tmp_path):
    out = tmp_path / "cell.json"
    assert cli_main(["cell", "--problem", "quadcell", "--cell", "0:0", "--ygrid", "-2,2,81",
                     "--out", str(out)]) == OK
    d = json.loads(out.read_text())
    assert abs(d["c0"]) <= 1e-2 and d["aubry_nodes"]
    with open(d["distance_csv_path"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["y", "S"] and len(rows) == 82
    v = tmp_path / "verify.json"
    assert cli_main(["verify", "--problem", "quadcell", "--x0", "0", "--p0", "0",
                     "--field", d["distance_csv_path"], "--mode", "supersolution",
                     "--out", str(v)]) == OK
    assert json.loads(v.read_text())["passed"] is True
    steep = tmp_path / "steep.csv"
    ys = np.linspace(-2, 2, 81)
    steep.write_text("y,u\n" + "".join(f"{float(y)!r},{float(10 * y)!r}\n" for y in ys))
    assert cli_main(["verify", "--problem", "quadcell", "--cell", "0:0", "--field", str(steep),
                     "--mode", "subsolution", "--b", "0", "--tol", "0.05"]) == FAILED


def test_cli_effective_and_limit(tmp_path):
    table = tmp_path / "table.csv"
    diag = tmp_path / "diag.json"
    assert cli_main(["effective", "--problem", "quadcell", "--xgrid", "-2,2,3", "--pgrid", "-5,5,11",
                     "--ygrid", "-2,2,41", "--out", str(table), "--diagnostics", str(diag)]) == OK
    assert json.loads(diag.read_text())["convexity_ok"] is True
    u = tmp_path / "u.csv"
    assert cli_main(["solve-limit", "--problem", "quadcell", "--table", str(table),
                     "--xgrid", "-2,2,41", "--T", "0.5", "--out", str(u)]) == OK
    rows = list(csv.reader(u.open()))
    assert rows[0] == ["x", "t", "u"]
    final = {float(r[0]): float(r[2]) for r in rows[1:] if float(r[1]) == 0.5}
    assert final[1.0] == pytest.approx(0.25, abs=0.05)
    assert cli_main(["solve-limit", "--problem", "quadcell", "--table", str(table),
                     "--xgrid", "-2,2,41", "--T", "0.5", "--dt", "1", "--out", str(u)]) == USAGE
    assert cli_main(["solve-limit", "--problem", "quadcell", "--table", str(tmp_path / "none.csv"),
                     "--xgrid", "-2,2,41", "--T", "0.5", "--out", str(u)]) == USAGE


def test_cli_solve_eps(tmp_path):
    out = tmp_path / "v.csv"
    assert cli_main(["solve-eps", "--problem", "quadcell", "--eps", "0.2", "--xgrid", "-2,2,21",
                     "--ygrid", "-2,2,21", "--T", "0.2", "--out", str(out)]) == OK
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["x", "y", "t", "value"] and len(rows) == 1 + 21 * 21


def test_cli_converge_outputs_and_determinism(tmp_path):
    args = ["converge", "--problem", "quadcell", "--eps", "0.4,0.2", "--xgrid", "-2,2,21",
            "--ygrid", "-2,2,21", "--pgrid", "-5,5,11", "--T", "0.3", "--t-min", "0.1"]
    codes = [cli_main(args + ["--out-dir", str(tmp_path / k)]) for k in ("a", "b")]
    assert codes[0] == codes[1] and codes[0] in (OK, FAILED)
    for name in ("report.json", "errors.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert codes[0] == (OK if rep["pass"] else FAILED)
    rows = list(csv.reader((tmp_path / "a" / "errors.csv").open()))
    assert rows[0] == ["eps", "sup_err", "oracle_err", "max_osc_T"] and len(rows) == 3
