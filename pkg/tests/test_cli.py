import copy
import json
from pathlib import Path

import pytest

from neass.cli import SUITES, main
from neass.runner import resolve_threads
from neass.scenario import ScenarioError, bundled, load, validate

SMALL = {
    "schema_version": "1",
    "name": "small",
    "geometry": {"kind": "chain", "length": 4},
    "model": {
        "hamiltonian": [{"builtin": "uniform_hopping", "ramp": 1.0},
                        {"builtin": "staggered_hopping",
                         "ramp": {"kind": "smoothstep", "start": 0.25, "stop": 0.55, "t_start": 0.0, "t_stop": 2.0}},
                        {"builtin": "staggered_potential", "ramp": 0.3}],
        "perturbation": [{"terms": [{"sites": [1, 2], "expr": "(n(1) - 0.5*I)*(n(2) - 0.5*I)"}]}],
        "potential": [{"field": [0.1], "origin": [1.5]}],
    },
    "interval": [0.0, 2.0],
    "order": 2,
    "observables": [{"name": "n1", "expr": "n(1)"}, {"name": "bond", "expr": "cdag(1)*c(2) + cdag(2)*c(1)"}],
    "sweeps": [{"kind": "cancellation", "t": 1.0, "samples": 10},
               {"kind": "adiabatic", "orders": [1], "eta": [0.4, 0.2, 0.1], "t0": 0.0, "t1": 1.0, "assert": False}],
    "seed": 3,
}


def _write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def _strip_timestamp(path: Path) -> dict:
    doc = json.loads(path.read_text())
    doc.pop("timestamp")
    return doc


def test_bundled_scenarios_validate():
    for name in filter(None, SUITES.values()):
        sc = load(bundled(name))
        assert sc.name == name and sc.plan()


def test_dry_run_prints_plan(tmp_path, capsys):
    assert main(["run", str(_write(tmp_path, SMALL)), "--dry-run"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["scenario"] == "small" and plan["threads"] == 1
    assert [p["points"] for p in plan["sweeps"]] == [1, 3]
    assert not list(tmp_path.glob("neass_out_*"))


@pytest.mark.parametrize("mutate,pointer", [
    (lambda d: d["sweeps"][1].__setitem__("eta", [1.5]), "/sweeps/1/eta/0"),
    (lambda d: d["sweeps"][0].__setitem__("kind", "teleport"), "/sweeps/0/kind"),
    (lambda d: d["sweeps"][1].pop("eta"), "/sweeps/1"),
    (lambda d: d.__setitem__("interval", [2.0, 0.0]), "/interval"),
    (lambda d: d["sweeps"][1].__setitem__("t1", 5.0), "/sweeps/1/t1"),
    (lambda d: d["model"]["perturbation"][0]["terms"][0].__setitem__("sites", [9]), "/model/perturbation/0"),
    (lambda d: d.__setitem__("tolerances", {"floor": -1}), "/tolerances/floor"),
])
def test_validation_errors_point_at_key(mutate, pointer):
    doc = copy.deepcopy(SMALL)
    mutate(doc)
    with pytest.raises(ScenarioError) as info:
        validate(doc)
    assert info.value.pointer.startswith(pointer)


def test_validation_exit_code(tmp_path, capsys):
    doc = copy.deepcopy(SMALL)
    doc["sweeps"][1]["eta"] = [0.0]
    assert main(["run", str(_write(tmp_path, doc))]) == 2
    assert "/sweeps/1/eta" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["run", str(tmp_path / "broken.json")]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_run_outputs_and_determinism(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["run", str(path), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(["run", str(path), "--out", str(tmp_path / "b"), "--threads", "1"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert _strip_timestamp(a / "results.json") == _strip_timestamp(b / "results.json")
    raw_a = [line for line in (a / "results.json").read_text().splitlines() if '"created"' not in line]
    raw_b = [line for line in (b / "results.json").read_text().splitlines() if '"created"' not in line]
    assert raw_a == raw_b
    for name in ("timing.json", "summary.txt", "sweep_0_cancellation.csv", "sweep_1_adiabatic.csv",
                 "sweep_1_adiabatic_n1.dat", "sweep_1_adiabatic.gp"):
        assert (a / name).exists(), name
    doc = json.loads((a / "results.json").read_text())
    assert doc["scenario_hash"] == load(path).hash() and doc["schema_version"] == "1"
    assert (a / "sweep_0_cancellation.csv").read_text().startswith(f"# scenario_hash={doc['scenario_hash']}")
    assert "wall_time" not in (a / "results.json").read_text()


def test_parallel_run_merges_in_grid_order(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["run", str(path), "--out", str(tmp_path / "one"), "--threads", "1"]) == 0
    assert main(["run", str(path), "--out", str(tmp_path / "two"), "--threads", "2"]) == 0
    one = _strip_timestamp(tmp_path / "one" / "results.json")
    two = _strip_timestamp(tmp_path / "two" / "results.json")
    assert one["sweeps"] == two["sweeps"]


def test_failed_assertion_exit_code(tmp_path):
    doc = copy.deepcopy(SMALL)
    doc["sweeps"] = [dict(SMALL["sweeps"][1], assert_=None)]
    doc["sweeps"][0].pop("assert_")
    doc["sweeps"][0]["assert"] = True
    doc["tolerances"] = {"floor": 1.0}
    assert main(["run", str(_write(tmp_path, doc)), "--out", str(tmp_path / "out")]) == 1
    assert "FAIL" in (tmp_path / "out" / "summary.txt").read_text()


def test_gap_closure_exit_code(tmp_path):
    doc = copy.deepcopy(SMALL)
    doc["model"] = {"hamiltonian": [{"builtin": "staggered_potential",
                                     "ramp": {"kind": "linear", "start": 1.0, "slope": -1.0}}]}
    doc["sweeps"] = [{"kind": "cancellation", "t": 0.5, "samples": 5}]
    doc["observables"] = "default"
    assert main(["run", str(_write(tmp_path, doc)), "--out", str(tmp_path / "out")]) == 3
    results = json.loads((tmp_path / "out" / "results.json").read_text())
    assert "GapError" in results["sweeps"][0]["records"][0]["error"]


def test_fit_command(tmp_path, capsys):
    csv_path = tmp_path / "series.csv"
    csv_path.write_text("# synthetic\nx,y\n0.4,0.16\n0.2,0.04\n0.1,0.01\n")
    assert main(["fit", str(csv_path)]) == 0
    assert json.loads(capsys.readouterr().out)["slope"] == pytest.approx(2.0)
    csv_path.write_text("eta,drift\n0.4,0.16\n")
    assert main(["fit", str(csv_path), "--x", "eta", "--y", "drift"]) == 2


def test_unknown_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["suite", "bogus"])
    assert info.value.code == 2
    assert "norms" in capsys.readouterr().err


def test_thread_resolution(monkeypatch):
    monkeypatch.delenv("NEASS_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("NEASS_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
