import csv
import json
import xml.etree.ElementTree as ET

import pytest

from teamcomm.cli import main
from teamcomm.report import AGENT_COLUMNS, API_COLUMNS, COMPARISON_COLUMNS, METRICS_COLUMNS
from teamcomm.scenario import (
    Params,
    ScenarioError,
    bundled,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


def plant_doc():
    return json.loads(bundled("plant").read_text())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# scenarios ------------------------------------------------------------------------------------

def test_bundled_plant():
    sc = load_scenario(bundled("plant"))
    assert len(sc.agents) == 8
    assert sc.params == Params(R=1.0, Tc=60.0, Dc=5.0, v=1.0, omega=1.5, K=500, rounds=100, seed=0)
    assert (sc.workspace.rows * sc.workspace.cell_size, sc.workspace.cols * sc.workspace.cell_size) == (10.0, 10.0)
    assert set(sc.workspace.regions) == {"P1", "P2", "R1", "R2", "R3", "R4", "M1", "M2", "M3", "M4"}
    assert all(set(a.actions) == {"collect", "unload", "monitor"} and set(a.actions.values()) == {4.0}
               for a in sc.agents)
    assert sc.signal is not None and sc.chain_pairs()[0] == (1, 2)


def test_round_trip():
    sc = load_scenario(bundled("plant"))
    again = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))))
    assert again.params == sc.params
    assert again.agents == sc.agents
    assert again.workspace.obstacles == sc.workspace.obstacles
    assert again.workspace.regions == sc.workspace.regions
    assert again.signal == sc.signal
    assert (again.baseline, again.pairing, again.estimate_mode) == (sc.baseline, sc.pairing, sc.estimate_mode)


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d["agents"][0].update(regions=["P9"]), "agents[0].regions"),
        (lambda d: d["agents"][1].update(task="[]<>(P1.collect &&"), "agents[1].task"),
        (lambda d: d["agents"][2].update(task="<>P1.collect"), "agents[2].task"),
        (lambda d: d["params"].update(Dc=60.0), "params"),
        (lambda d: d["params"].update(speed=2.0), "params"),
        (lambda d: d["workspace"]["regions"]["P1"].update(cell=[4, 3]), "workspace"),
        (lambda d: d.update(baseline="gossip"), "baseline"),
        (lambda d: d["agents"][0].update(start=[4, 4]), "agents[0].start"),
        (lambda d: d.update(pairing=[[1, 1]]), "pairing"),
        (lambda d: d["agents"][1].update(id=1), "agents"),
    ],
)
def test_validation_errors(mutate, where):
    doc = plant_doc()
    mutate(doc)
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(doc)
    assert err.value.where == where


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "agents": [,]\n}\n')
    with pytest.raises(ScenarioError) as err:
        load_scenario(p)
    assert err.value.where.startswith("line 3 column")


# command line -----------------------------------------------------------------------------------

def test_plan_solo(tmp_path, capsys):
    assert main(["plan", "solo", "--out-dir", str(tmp_path)]) == 0
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["plan_agent1.json"]
    doc = json.loads((tmp_path / "plan_agent1.json").read_text())
    assert doc["satisfies"] is True and doc["makespan"] > 0
    assert "makespan" in capsys.readouterr().out


def test_plan_plant(tmp_path):
    assert main(["plan", "plant", "--out-dir", str(tmp_path)]) == 0
    docs = [json.loads((tmp_path / f"plan_agent{i}.json").read_text()) for i in range(1, 9)]
    assert all(d["satisfies"] for d in docs)


def test_malformed_formula_exits_with_offset(tmp_path, capsys):
    doc = plant_doc()
    doc["agents"][0]["task"] = "[]<>(P1.collect && <>R1.unload"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert main(["plan", str(p), "--out-dir", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "agents[0].task" in err and "offset 4" in err


def test_missing_file_is_invalid_input(tmp_path):
    assert main(["plan", str(tmp_path / "nope.json")]) == 2


def test_infeasible_task_exits_one(tmp_path, capsys):
    doc = plant_doc()
    doc["agents"] = doc["agents"][:1]
    doc["agents"][0]["task"] = "[]<>(P1.collect && R1.unload)"
    p = tmp_path / "inf.json"
    p.write_text(json.dumps(doc))
    assert main(["plan", str(p), "--out-dir", str(tmp_path / "out")]) == 1
    assert "agent 1" in capsys.readouterr().err


@pytest.fixture(scope="module")
def run20(tmp_path_factory):
    out = tmp_path_factory.mktemp("run20")
    assert main(["run", "plant", "--rounds", "20", "--out-dir", str(out)]) == 0
    return out


def test_run_writes_all_outputs(run20):
    names = {p.name for p in run20.iterdir()}
    assert names == {"events.jsonl", "game_trace.jsonl", "metrics.csv", "agents.csv", "topology_heatmap.svg", "api.csv"}


def test_run_schedules_and_windows(run20):
    events = [json.loads(line) for line in (run20 / "events.jsonl").read_text().splitlines()]
    schedules = [e for e in events if e["kind"] == "schedule"]
    assert [e["round"] for e in schedules] == list(range(1, 21))
    rows = read_csv(run20 / "metrics.csv")
    assert list(rows[0]) == METRICS_COLUMNS
    assert len(rows) == 21
    assert all(r["window_pass"] == "1" and r["violation"] == "0" for r in rows)
    for r in rows[1:]:
        assert float(r["phi_per_agent"]) <= float(r["phi_initial_per_agent"]) + 1e-9


def test_run_output_schemas(run20):
    for line in (run20 / "events.jsonl").read_text().splitlines():
        e = json.loads(line)
        assert {"t", "kind"} <= set(e)
    for line in (run20 / "game_trace.jsonl").read_text().splitlines():
        assert set(json.loads(line)) == {"round", "iteration", "mover", "sigma", "potential", "cells", "hops"}
    agents = read_csv(run20 / "agents.csv")
    assert list(agents[0]) == AGENT_COLUMNS and len(agents) == 8
    assert all(r["task_satisfied"] == "1" for r in agents)
    api = read_csv(run20 / "api.csv")
    assert list(api[0]) == API_COLUMNS
    for r in api[:50]:
        assert float(r["deviation"]) == pytest.approx(float(r["estimate"]) - float(r["truth"]))
    svg = ET.parse(run20 / "topology_heatmap.svg").getroot()
    assert svg.tag.endswith("svg") and svg.get("width") == str(20 * 24)


def test_run_is_deterministic(run20, tmp_path):
    assert main(["run", "plant", "--rounds", "20", "--out-dir", str(tmp_path)]) == 0
    for name in ("events.jsonl", "game_trace.jsonl"):
        assert (tmp_path / name).read_bytes() == (run20 / name).read_bytes()


def test_verify_solo(capsys):
    assert main(["verify", "solo", "--rounds", "5"]) == 0
    out = capsys.readouterr().out
    assert "task ok" in out and "windows passed 6/6" in out


def test_verify_pairwise_fails_team_windows(capsys):
    assert main(["verify", "plant", "--rounds", "3", "--baseline", "pairwise"]) == 1


@pytest.fixture(scope="module")
def compare(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    assert main(["compare", "plant", "--rounds", "15", "--out-dir", str(out)]) == 0
    return out


def test_compare_table(compare):
    rows = read_csv(compare / "comparison.csv")
    assert list(rows[0]) == COMPARISON_COLUMNS
    assert [r["method"] for r in rows] == ["nash", "static", "pairwise", "alltime"]
    by = {r["method"]: r for r in rows}
    assert float(by["alltime"]["connected_fraction"]) == 1.0
    assert float(by["nash"]["mean_extra"]) < float(by["static"]["mean_extra"])
    assert by["nash"]["windows_passed"] == by["nash"]["windows"] == "16"


def test_compare_deviation_series(compare):
    rows = read_csv(compare / "deviations.csv")
    assert list(rows[0]) == ["t", "nash", "static", "pairwise", "alltime"]
    assert float(rows[0]["t"]) == 5.0
    assert all(float(v) >= 0 for r in rows for k, v in r.items() if k != "t")


def test_max_iters_flag(tmp_path):
    assert main(["run", "plant", "--rounds", "2", "--max-iters", "0", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "metrics.csv")
    assert all(r["iterations"] == "0" for r in rows)
    assert all(r["phi_per_agent"] == r["phi_initial_per_agent"] for r in rows)
