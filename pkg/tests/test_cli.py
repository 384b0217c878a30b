import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcphs.cli import EXIT_INVARIANT, EXIT_OK, EXIT_SCENARIO, main, traces_header
from bcphs.scenario import SCHEMA, Design, Scenario, ScenarioError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def write_scenario(tmp_path, **doc):
    doc.setdefault("schema", SCHEMA)
    p = tmp_path / "scn.json"
    p.write_text(json.dumps(doc))
    return p


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def small_beam(tmp_path, **extra):
    doc = dict(model={"preset": "beam-2m"}, grid={"n_d": 40},
               solver={"scheme": "matrix_exponential", "dt": 1e-3, "t_end": 0.5, "stride": 10},
               designs=[{"name": "d2", "L": [0.1, 1.0]}], output=str(tmp_path / "out"))
    doc.update(extra)
    return write_scenario(tmp_path, **doc)


# -- golden headers ---------------------------------------------------------------

def test_traces_header_golden():
    assert traces_header(2, True) == ["t", "H", "H_hat", "H_tilde", "y_m_1", "y_m_2",
                                      "y_m_hat_1", "y_m_hat_2", "tip", "tip_hat", "tip_error",
                                      "residual"]
    assert traces_header(2, False)[-1] == "residual"


def test_simulate_beam_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", str(small_beam(tmp_path))]) == EXIT_OK
    assert header(out / "traces.csv") == traces_header(2, True)
    assert header(out / "field.csv") == ["t", "part", "component", "zeta", "value"]
    assert header(out / "deflection.csv") == ["t", "zeta", "w", "w_hat", "w_error", "w_from_velocity"]
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "ok" and rep["failures"] == []
    assert rep["balance_operator_residual"] < 1e-8
    assert rep["max_step_increase_H_tilde"] <= 1e-9
    assert abs(rep["deflection"]["w0_tip"] - (1 / 6 - 0.45)) < 2e-3
    tr = rows(out / "traces.csv")
    assert len(tr) == 501
    t = np.array([float(r["t"]) for r in tr])
    assert np.all(np.diff(t) > 0)
    # full precision round trip
    assert float(tr[0]["H"]) == pytest.approx(rep["H0"], rel=1e-15)
    for name in ("energy.svg", "tip.svg"):
        text = (out / name).read_text()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert oct((out / "traces.csv").stat().st_mode)[-3:] == "644"


def test_wave_smoke(tmp_path):
    scn = json.loads((SCENARIOS / "wave.json").read_text())
    scn["solver"]["t_end"] = 0.5
    scn["output"] = str(tmp_path / "w")
    p = write_scenario(tmp_path, **scn)
    assert main(["simulate", str(p)]) == EXIT_OK
    assert header(tmp_path / "w" / "traces.csv") == traces_header(2, False)
    assert not (tmp_path / "w" / "deflection.csv").exists()


def test_open_loop_conservation(tmp_path):
    p = small_beam(tmp_path, model={"preset": "beam-2m", "params": {"d": 0.0}},
                   designs=[{"name": "zero", "L": [0.0, 0.0]}], open_loop=True,
                   initial={"plant": [[], [-0.9, 1.0]], "observer": [[], [0.0, 0.5]]})
    assert main(["simulate", str(p), "--tend", "2"]) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["relative_H_tilde_drift"] < 1e-8


def test_zero_gain_needs_open_loop(tmp_path):
    p = small_beam(tmp_path, designs=[{"name": "zero", "L": [0.0, 0.0]}])
    assert main(["simulate", str(p)]) == EXIT_INVARIANT
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["status"] == "invariant_failure"


def test_solver_and_grid_overrides(tmp_path):
    p = small_beam(tmp_path)
    assert main(["simulate", str(p), "--solver", "midpoint", "--nd", "60", "--tend", "0.2"]) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["solver"] == "implicit_midpoint" and rep["n_d"] == 60 and rep["t_end"] == 0.2


# -- scenario errors -------------------------------------------------------------

def test_empty_time_span(tmp_path, capsys):
    p = small_beam(tmp_path)
    assert main(["simulate", str(p), "--tend", "0"]) == EXIT_SCENARIO
    assert "time span" in capsys.readouterr().err


def test_json_error_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "model": {"preset": "beam-2m"},\n  "grid": {"n_d": 40,}\n}\n')
    assert main(["simulate", str(p)]) == EXIT_SCENARIO
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize("doc,where", [
    ({"model": {"preset": "plate"}}, "model.preset"),
    ({"model": {}}, "model"),
    ({"model": {"preset": "wave"}, "colour": 1}, "colour"),
    ({"model": {"preset": "wave"}, "schema": "other/2"}, "schema"),
    ({"model": {"preset": "wave"}, "designs": [{"name": "x"}]}, "designs[0]"),
    ({"model": {"preset": "wave"}, "sweep": {"base": [1], "points": 0}}, "sweep.points"),
    ({"model": {"preset": "wave"}, "solver": {"dt": -1}}, "solver"),
])
def test_scenario_validation(doc, where):
    with pytest.raises(ScenarioError) as exc:
        Scenario.from_dict(doc)
    assert exc.value.where == where


def test_missing_file(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.json")]) == EXIT_SCENARIO


names = st.text("abcdefgh", min_size=1, max_size=6)
floats = st.floats(0.01, 10, allow_nan=False)


@given(st.sampled_from(["beam-2m", "beam-3m", "wave"]),
       st.lists(st.tuples(names, st.lists(floats, min_size=2, max_size=2)), max_size=3),
       st.integers(20, 200).map(lambda k: 2 * k), st.floats(0.1, 10), st.booleans())
def test_scenario_round_trip(model, designs, n_d, t_end, open_loop):
    scn = Scenario(model={"preset": model}, grid={"n_d": n_d},
                   solver={"scheme": "matrix_exponential", "dt": 1e-3, "t_end": t_end, "stride": 5},
                   designs=[{"name": n, "L": L} for n, L in designs], open_loop=open_loop)
    back = Scenario.loads(scn.dumps())
    assert back.to_dict() == scn.to_dict()
    assert back.solver_config() == scn.solver_config()


def test_sweep_design_expansion():
    scn = Scenario(model={"preset": "beam-2m"}, designs=[{"name": "a", "L": [1, 2]}],
                   sweep={"base": [0.1, 1.0], "scale_min": 0.5, "scale_max": 2.0, "points": 3})
    ds = scn.all_designs()
    assert [d.name for d in ds][0] == "a" and len(ds) == 4
    assert np.allclose(ds[-1].L, [0.2, 2.0]) and np.allclose(ds[2].L, [0.1, 1.0])
    assert np.array_equal(Design("m", [[1, 2], [3, 4]]).matrix(), [[1, 2], [3, 4]])


def test_initial_profile_components():
    scn = Scenario(model={"preset": "beam-2m"}, initial={"plant": [[1.0]]})
    spec, _ = scn.build()
    with pytest.raises(ScenarioError):
        scn.initial_profile("plant", spec)


def test_inline_model(tmp_path):
    from bcphs.models import wave_spec
    spec, io = wave_spec()
    inline = {"P": [p.tolist() for p in spec.P], "H": np.eye(2).tolist(),
              "W_B": io.W_B.tolist(), "W_C": io.W_C.tolist(), "C_m": io.C_m.tolist(),
              "L": io.L.tolist()}
    p = write_scenario(tmp_path, model={"inline": inline}, grid={"n_d": 40},
                       solver={"t_end": 0.2}, initial={"plant": [[], [0.0, 1.0, -1.0]]},
                       output=str(tmp_path / "inl"))
    assert main(["simulate", str(p)]) == EXIT_OK
    bad = write_scenario(tmp_path, model={"inline": {"P": inline["P"]}}, output=str(tmp_path / "bad"))
    assert main(["simulate", str(bad)]) == EXIT_SCENARIO


# -- other commands --------------------------------------------------------------

def test_verify_command(tmp_path, capsys):
    p = small_beam(tmp_path, analyses=["witness"])
    assert main(["verify", str(p)]) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "verify.json").read_text())
    got = {(v["proposition"], v["branch"]): v for v in doc["verdicts"]}
    assert got[("P4_exp_partitioned", "3")]["status"] == "feasible"
    w = got[("P3_exp_N2", "1")]
    assert w["status"] == "infeasible" and w["witness_runtime_min_ratio"] < 1e-3
    assert "P3_exp_N2" in capsys.readouterr().out


def test_sweep_command(tmp_path):
    p = small_beam(tmp_path, designs=[{"name": "a", "L": [0.03, 0.3]}],
                   sweep={"base": [0.1, 1.0], "scale_min": 1.0, "scale_max": 2.0, "points": 2},
                   solver={"dt": 1e-3, "t_end": 1.0})
    assert main(["sweep", str(p)]) == EXIT_OK
    out = tmp_path / "out"
    assert header(out / "sweep.csv") == ["design", "L", "alpha", "t_conv", "label", "crossings",
                                         "overshoot"]
    assert [r["design"] for r in rows(out / "sweep.csv")] == ["a", "x1", "x2"]
    assert (out / "sweep_h_tilde.svg").exists() and (out / "sweep_tip_error.svg").exists()
    doc = json.loads((out / "sweep.json").read_text())
    assert len(doc["designs"]) == 3


def test_sweep_parallel_matches_serial(tmp_path):
    base = dict(designs=[{"name": "a", "L": [0.1, 1.0]}, {"name": "b", "L": [0.2, 2.0]}],
                solver={"dt": 1e-3, "t_end": 0.3})
    p = small_beam(tmp_path, **base)
    assert main(["sweep", str(p), "--out", str(tmp_path / "s1")]) == EXIT_OK
    assert main(["sweep", str(p), "--out", str(tmp_path / "s2"), "--jobs", "2"]) == EXIT_OK
    assert (tmp_path / "s1" / "sweep.csv").read_text() == (tmp_path / "s2" / "sweep.csv").read_text()


def test_export_command(tmp_path):
    import scipy.io
    p = small_beam(tmp_path)
    assert main(["export-matrices", str(p)]) == EXIT_OK
    mdir = tmp_path / "out" / "matrices"
    A = scipy.io.mmread(str(mdir / "error_A.mtx"))
    assert A.shape == (40, 40)
    assert (mdir / "plant_M_E.mtx").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "bcphs", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout


def test_shipped_scenarios_load():
    for p in SCENARIOS.glob("*.json"):
        scn = Scenario.load(p)
        for d in scn.all_designs() or [None]:
            scn.build(d)
