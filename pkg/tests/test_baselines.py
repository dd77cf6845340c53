from dataclasses import replace

import numpy as np
import pytest

from instances import plant_subset
from teamcomm.baselines import (
    SPACING,
    BaselineKind,
    alltime_schedule,
    pairwise_schedule,
    run_scheme,
    static_schedule,
)
from teamcomm.executor import chain_matchings, run_simulation, verify_sufficient_communication
from teamcomm.planner import IDLE
from teamcomm.scenario import bundled, load_scenario


def test_kinds():
    assert {k.value for k in BaselineKind} == {"static", "pairwise", "alltime"}


def test_static_cells_are_the_starts():
    sc = plant_subset(4, 3)
    S = static_schedule(sc, 1)
    assert S.cells == [a.start for a in sc.agents]
    assert sc.params.Tc <= S.t_c < 2 * sc.params.Tc


def test_static_every_round_meets_at_the_starts():
    sc = plant_subset(3, 4)
    tr = run_scheme(sc, "static")
    starts = [list(a.start) for a in sc.agents]
    for e in tr.comm_events():
        assert e["cells"] == starts
    assert all(verify_sufficient_communication(tr.connectivity(), sc.params.Tc, sc.params.Dc, 5))


def test_static_with_colocated_starts_is_a_gathering():
    sc = plant_subset(3, 2)
    a0 = sc.agents[0]
    sc = replace(sc, agents=tuple(replace(a, start=a0.start, heading=a0.heading) for a in sc.agents))
    S = static_schedule(sc, 1)
    assert len(set(S.cells)) == 1 and S.cells[0] == a0.start


def test_chain_matchings():
    assert chain_matchings([(1, 2), (2, 3), (3, 4), (4, 5)]) == [[(1, 2), (3, 4)], [(2, 3), (4, 5)]]
    assert chain_matchings([]) == []
    assert pairwise_schedule(plant_subset(3, 1)) == [[(1, 2)], [(2, 3)]]


def test_two_agent_pairwise_is_the_team_scheme():
    sc = plant_subset(2, 4)
    a = run_scheme(sc, "pairwise")
    b = run_scheme(sc, "nash")
    assert a.events_jsonl() == b.events_jsonl()


def test_chain_of_three_needs_two_meetings():
    sc = plant_subset(3, 3)
    tr = run_scheme(sc, "pairwise")
    meets = [e for e in tr.comm_events() if e["round"] > 0]
    assert [sorted(e["agents"]) for e in meets[:2]] == [[1, 2], [2, 3]]
    # agent 1's round-1 information reaches agent 3 no earlier than the second meeting
    first_with_3 = next(e for e in meets if 3 in e["agents"])
    assert first_with_3["round"] == 2
    assert 1 not in first_with_3["agents"]


@pytest.fixture(scope="module")
def convoy():
    sc = plant_subset(4, 3)
    return sc, alltime_schedule(sc)


def test_convoy_is_always_connected(convoy):
    sc, tr = convoy
    log = tr.connectivity()
    assert log.fraction == 1.0
    assert all(verify_sufficient_communication(log, sc.params.Tc, sc.params.Dc, sc.params.rounds + 1))


def test_convoy_spacing(convoy):
    sc, tr = convoy
    ts = np.arange(0.0, tr.end, 0.05)
    pos = tr.positions(ts)
    gaps = np.linalg.norm(pos[:, 1:] - pos[:, :-1], axis=-1)
    assert gaps.max() <= SPACING * sc.params.R + 1e-9


def test_convoy_takes_turns(convoy):
    sc, tr = convoy
    acts = [e["agent"] for e in tr.events if e["kind"] == "action_start" and e["action"] != IDLE]
    n = len(sc.agents)
    assert acts[: 2 * n] == [a.id for a in sc.agents] * 2


def test_convoy_events_are_time_ordered(convoy):
    _, tr = convoy
    ts = [e["t"] for e in tr.events]
    assert ts == sorted(ts)


def test_single_agent_convoy_is_solo_execution():
    sc = load_scenario(bundled("solo"))
    sc = replace(sc, params=replace(sc.params, rounds=3))
    solo = run_simulation(sc)
    convoy = alltime_schedule(sc, horizon=200.0)
    plan = solo.plans[1]
    # without rendezvous the lone agent runs its plan back to back
    t, nominal = 0.0, []
    for g in range(1, 30):
        t += plan.step_cost(g - 1)
        nominal.append((g, t))
    got = [(e["index"], e["t"]) for e in convoy.events if e["kind"] == "subtask_done"]
    for (g, t), (h, s) in zip(nominal, got):
        assert g == h and s == pytest.approx(t, abs=1e-9)
    assert convoy.satisfactions[1][1] - convoy.satisfactions[1][0] == pytest.approx(plan.makespan, abs=1e-6)


def test_convoy_is_slower_per_agent():
    sc = plant_subset(4, 6)
    tr = alltime_schedule(sc)
    solo = {a.id: tr.plans[a.id].makespan for a in sc.agents}
    for a in sc.agents:
        gaps = np.diff(tr.satisfactions[a.id])
        assert len(gaps) >= 1
        assert gaps.max() > solo[a.id]
