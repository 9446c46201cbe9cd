import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from decnash.cli import main
from decnash.dynamics import VehicleParams
from decnash.paths import PathPolynomial, straight_path
from decnash.scenarios import ScenarioError, load_scenario, scenario_from_dict, scenario_to_dict
from decnash.simulation import Scenario


def write_csv(path, pts, header=True):
    lines = ["x,y"] if header else []
    lines += [f"{float(x)!r},{float(y)!r}" for x, y in pts]
    path.write_text("\n".join(lines) + "\n")


def residual(path_json, pts):
    p = PathPolynomial.from_dict(json.loads(path_json.read_text()))
    # chord-length parameters, as used by the fit
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    xy, _, _ = p.evaluate_extended(s)
    return float(np.max(np.hypot(*(xy - pts).T)))


def six_vehicle_doc():
    vs = [VehicleParams(f"c{k}", straight_path((0, 4.0 * k), (60, 4.0 * k)), v_target=6.0) for k in range(6)]
    return scenario_to_dict(Scenario(tuple(vs), sim_duration=1.0, policy="centralized"))


# fit

def test_fit_straight_line(tmp_path, capsys):
    pts = np.c_[np.linspace(0, 30, 11), np.linspace(5, -10, 11)]
    write_csv(tmp_path / "w.csv", pts)
    assert main(["fit", "--in", str(tmp_path / "w.csv"), "--degree", "1", "--out", str(tmp_path / "p.json")]) == 0
    assert residual(tmp_path / "p.json", pts) < 1e-12
    assert "rms residual" in capsys.readouterr().out


def test_fit_circle_arc(tmp_path):
    ang = np.linspace(0, 1.5 * math.pi, 200)
    pts = np.c_[15 * np.cos(ang), 15 * np.sin(ang)]
    write_csv(tmp_path / "arc.csv", pts, header=False)
    assert main(["fit", "--in", str(tmp_path / "arc.csv"), "--degree", "20", "--out", str(tmp_path / "p.json")]) == 0
    assert residual(tmp_path / "p.json", pts) < 1e-3


def test_fit_too_few_rows(tmp_path, capsys):
    write_csv(tmp_path / "w.csv", [(0, 0), (1, 0), (2, 1)])
    assert main(["fit", "--in", str(tmp_path / "w.csv"), "--degree", "20", "--out", str(tmp_path / "p.json")]) == 2
    assert "at least 21" in capsys.readouterr().err
    assert not (tmp_path / "p.json").exists()


def test_fit_malformed_line_number(tmp_path, capsys):
    (tmp_path / "w.csv").write_text("x,y\n0,0\n1,oops\n2,2\n")
    assert main(["fit", "--in", str(tmp_path / "w.csv"), "--degree", "1", "--out", str(tmp_path / "p.json")]) == 2
    assert "w.csv:3" in capsys.readouterr().err


# scenario files

def test_unknown_keys_rejected():
    doc = six_vehicle_doc()
    doc["sim"]["durration"] = 5
    with pytest.raises(ScenarioError, match="durration"):
        scenario_from_dict(doc)
    doc = six_vehicle_doc()
    doc["vehicles"][0]["vtarget"] = 3
    with pytest.raises(ScenarioError, match=r"vehicles\[0\]"):
        scenario_from_dict(doc)
    with pytest.raises(ScenarioError):
        scenario_from_dict({**six_vehicle_doc(), "extra": {}})


def test_duplicate_ids_and_missing_waypoints(tmp_path):
    doc = six_vehicle_doc()
    doc["vehicles"][1]["id"] = "c0"
    with pytest.raises(ScenarioError, match="unique"):
        scenario_from_dict(doc)
    doc = six_vehicle_doc()
    v = doc["vehicles"][0]
    del v["path"]
    v["waypoints_file"] = "nope.csv"
    with pytest.raises(ScenarioError, match="not found"):
        scenario_from_dict(doc, tmp_path)


def test_waypoints_file_reference(tmp_path):
    pts = np.c_[np.linspace(0, 40, 30), np.zeros(30)]
    write_csv(tmp_path / "lane.csv", pts)
    doc = six_vehicle_doc()
    v = doc["vehicles"][0]
    del v["path"]
    v.update(waypoints_file="lane.csv", fit_degree=3)
    sc = scenario_from_dict(doc, tmp_path)
    assert sc.vehicles[0].path.s_max == pytest.approx(40.0)


def test_round_trip_demos():
    for name in ("straight", "crossing", "roundabout"):
        sc = load_scenario(f"demo:{name}")
        again = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))))
        assert again == sc


def test_bad_scenario_exit_code(tmp_path, capsys):
    (tmp_path / "s.json").write_text('{"sim": {"duration": 1,}}')
    assert main(["run", "--scenario", str(tmp_path / "s.json"), "--out-dir", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert main(["run", "--scenario", "demo:nowhere", "--out-dir", str(tmp_path / "o")]) == 2


# run and compare

def test_run_idm_smoke(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", "demo:roundabout", "--policy", "idm", "--duration", "10",
                 "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert rows[0]["policy"] == "idm"
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "time,vehicle_id,s,v,x,y,u,game_id,game_size"
    eff = json.loads((out / "effective_scenario.json").read_text())
    assert eff["sim"]["policy"] == "idm" and eff["sim"]["duration"] == 10


def test_run_twice_byte_identical(tmp_path):
    args = ["run", "--scenario", "demo:crossing", "--policy", "decnash", "--seed", "7", "--duration", "3"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_centralized_six_players(tmp_path):
    (tmp_path / "six.json").write_text(json.dumps(six_vehicle_doc()))
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(tmp_path / "six.json"), "--out-dir", str(out), "--plots",
                 "--dump-solver-trace", "--dump-games"]) == 0
    row = next(csv.DictReader(open(out / "metrics.csv")))
    assert int(row["max_players_per_game"]) == 6
    svg = (out / "planned_trajectory.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") >= 12
    assert (out / "velocity_profile.svg").exists()
    games = [json.loads(line) for line in open(out / "games.jsonl")]
    assert len(games) == 10 and len(games[0]["game"]["controlled"]) == 6
    assert (out / "solver_trace.jsonl").stat().st_size > 0


def test_dump_graphs(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", "demo:crossing", "--duration", "1", "--dump-graphs", "--out-dir", str(out)]) == 0
    recs = [json.loads(line) for line in open(out / "graphs.jsonl")]
    assert len(recs) == 10 and {"nodes", "edges", "components", "outgoing"} <= set(recs[0])


def test_compare_three_rows(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["compare", "--scenario", "demo:crossing", "--runs", "1", "--duration", "2", "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "comparison.csv")))
    assert [r["policy"] for r in rows] == ["decnash", "centralized", "idm"]
    assert len(list(csv.DictReader(open(out / "runs.csv")))) == 3
    assert "Policy" in (out / "comparison.txt").read_text()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "decnash", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "compare" in r.stdout
