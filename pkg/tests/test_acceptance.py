"""Acceptance suite: one group of tests per criterion, summarized at the end
of the pytest run by the hook in conftest.py."""

import math
import random
import time

import numpy as np
import pytest
from scipy.sparse.csgraph import floyd_warshall

from corpus import LTL_CORPUS, lassos
from instances import DYADIC, random_workspace, small_game
from teamcomm.baselines import run_scheme
from teamcomm.cli import main
from teamcomm.executor import run_simulation, task_satisfied, verify_sufficient_communication
from teamcomm.game import TeamStrategy, cost, is_nash, nash_iterate, potential
from teamcomm.ltl import nba_accepts_lasso, parse_ltl, translate_to_nba, word_satisfies
from teamcomm.planner import AgentSpec, build_product, build_transition_system, synthesize_plan
from teamcomm.report import summarize
from teamcomm.scenario import bundled, load_scenario
from teamcomm.workspace import Region

criterion = pytest.mark.criterion


@pytest.fixture(scope="module")
def plant():
    return load_scenario(bundled("plant"))


@pytest.fixture(scope="module")
def nash_run(plant):
    return run_simulation(plant)


@pytest.fixture(scope="module")
def static_run(plant):
    return run_scheme(plant, "static")


@pytest.fixture(scope="module")
def horizon(plant):
    return plant.params.rounds * plant.params.Tc + plant.params.Dc


# 1 -------------------------------------------------------------------------------------------

@criterion(1, "exact potential identity over random unilateral switches")
def test_criterion_1_exact_potential():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    switches, worst = 0, 0.0
    for seed in range(50):
        game, _, _ = small_game(1000 + seed, n=rng.randint(2, 4), rows=6, cols=6)
        for _ in range(210):
            S = TeamStrategy(1, tuple(
                game.strategy(k, int(rng.choice(game.hs[k])), rng.choice(game.Z)) for k in range(game.N)
            ))
            k = rng.randrange(game.N)
            S2 = S.with_strategy(game.strategy(k, int(rng.choice(game.hs[k])), rng.choice(game.Z)))
            a = S.strategies[k].agent
            worst = max(worst, abs((cost(a, S2) - cost(a, S)) - (potential(S2) - potential(S))))
            switches += 1
    elapsed = time.perf_counter() - t0
    print(f"criterion 1: {switches} switches over 50 scenarios, worst gap {worst:.2e} s, {elapsed:.1f} s")
    assert switches >= 10_000
    assert worst <= 1e-9
    assert elapsed < 60


# 2 -------------------------------------------------------------------------------------------

@criterion(2, "best-response output is a Nash equilibrium on small instances")
def test_criterion_2_nash_correctness():
    t0 = time.perf_counter()
    passed = 0
    for seed in range(24):
        game, _, _ = small_game(2000 + seed, n=2 + seed % 2, rows=6 + seed % 3, cols=6 + seed % 3)
        S, _ = nash_iterate(game, game.initial_strategy())
        assert is_nash(game, S), f"instance {seed}"
        passed += 1
    elapsed = time.perf_counter() - t0
    print(f"criterion 2: {passed} instances pass the exhaustive check in {elapsed:.1f} s")
    assert passed >= 20 and elapsed < 300


# 3 -------------------------------------------------------------------------------------------

@criterion(3, "monotone convergence and coordination time on the plant scenario")
def test_criterion_3_monotone_convergence(nash_run):
    by_round: dict[int, list[float]] = {}
    for e in nash_run.game_trace:
        by_round.setdefault(e["round"], []).append(e["potential"])
    groups = [g for g in nash_run.groups if g.round > 0]
    assert len(groups) == 100
    for g in groups:
        phis = [g.phi_initial] + by_round.get(g.round, [])
        assert all(b < a for a, b in zip(phis, phis[1:])), f"round {g.round}"
        assert phis[-1] == pytest.approx(g.phi_final)
        assert g.iterations < 500
        assert g.wall_clock < 5.0
    mean_wall = np.mean([g.wall_clock for g in groups])
    print(f"criterion 3: max {max(g.iterations for g in groups)} iterations, "
          f"mean coordination {mean_wall:.3f} s, max {max(g.wall_clock for g in groups):.3f} s")


# 4 -------------------------------------------------------------------------------------------

@criterion(4, "sufficient communication in every window of the plant scenario")
def test_criterion_4_windows(nash_run, plant):
    p = plant.params
    windows = verify_sufficient_communication(nash_run.connectivity(), p.Tc, p.Dc, p.rounds + 1)
    print(f"criterion 4: {sum(windows)}/{len(windows)} windows pass")
    assert all(windows)
    starts = [e for e in nash_run.events if e["kind"] == "comm_start"]
    ends = [e for e in nash_run.events if e["kind"] == "comm_end"]
    for r in range(p.rounds + 1):
        s = [e for e in starts if e["round"] == r]
        f = [e for e in ends if e["round"] == r]
        assert len(s) == len(f) == 1, f"round {r}"
        assert r * p.Tc <= s[0]["t"] < (r + 1) * p.Tc
        assert f[0]["t"] - s[0]["t"] == pytest.approx(p.Dc, abs=1e-9)


# 5 -------------------------------------------------------------------------------------------

@criterion(5, "every agent's realized word satisfies its task")
@pytest.mark.parametrize("which", ["nash", "static", "solo"])
def test_criterion_5_task_satisfaction(which, plant, nash_run, static_run):
    if which == "solo":
        sc = load_scenario(bundled("solo"))
        trace = run_simulation(sc)
    else:
        sc, trace = plant, nash_run if which == "nash" else static_run
    ok = [task_satisfied(trace, a, trace.plans[a.id]) for a in sc.agents]
    print(f"criterion 5 ({which}): {sum(ok)}/{len(ok)} agents satisfied")
    assert all(ok)


# 6 -------------------------------------------------------------------------------------------

@criterion(6, "automaton translation agrees with the semantics on the formula corpus")
def test_criterion_6_ltl_translation():
    t0 = time.perf_counter()
    words = list(lassos(("p", "q"), 6))
    assert len(LTL_CORPUS) == 30
    checks = disagreements = 0
    for text in LTL_CORPUS:
        f = parse_ltl(text, {"p", "q"})
        a = translate_to_nba(f)
        for u, v in words:
            checks += 1
            disagreements += nba_accepts_lasso(a, u, v) != word_satisfies(f, u, v)
    elapsed = time.perf_counter() - t0
    print(f"criterion 6: {checks} checks, {disagreements} disagreements, {elapsed:.1f} s")
    assert disagreements == 0
    assert elapsed < 120


# 7 -------------------------------------------------------------------------------------------

def _min_accepting_cycle(p) -> float:
    n = len(p)
    m = np.full((n, n), np.inf)
    for u, out in enumerate(p.edges):
        for v, c in out:
            m[u, v] = min(m[u, v], c)
    d = floyd_warshall(m, directed=True)
    best = math.inf
    for f in p.accepting:
        if not any(i == f or np.isfinite(d[i, f]) for i in p.initial):
            continue
        for u in range(n):
            if np.isfinite(m[u, f]):
                best = min(best, (0.0 if u == f else d[f, u]) + m[u, f])
    return best


@criterion(7, "synthesized makespan equals the brute-force minimal accepting cycle")
def test_criterion_7_plan_optimality():
    rng = random.Random(77)
    headings = [0.0, math.pi / 2, math.pi, -math.pi / 2]
    done = 0
    while done < 25:
        w = random_workspace(rng, 7, 7, rng.randint(0, 10))
        cells = rng.sample(w.free_cells, 4)
        regions = tuple(Region(n, c, rng.choice(headings)) for n, c in zip(("P", "R", "M"), cells))
        acts = {a: float(rng.choice([1, 2, 4])) for a in ("collect", "unload", "monitor")}
        spec = AgentSpec(1, cells[3], 0.0, regions, acts, "[]<>(P.collect && <>(R.unload && <>M.monitor))", DYADIC)
        p = build_product(build_transition_system(spec, w), translate_to_nba(spec.formula()))
        if len(p) > 200:
            continue
        assert synthesize_plan(p).makespan == _min_accepting_cycle(p)
        done += 1
    print(f"criterion 7: {done} instances optimal")


# 8 -------------------------------------------------------------------------------------------

@criterion(8, "consensus fusion and deviation ordering")
def test_criterion_8_mean_preserved(nash_run):
    recs = nash_run.tracker.windows
    n = len(nash_run.agents)
    worst = max(abs(r["mean_after"] - r["mean_before"]) / max(1.0, abs(r["mean_before"])) for r in recs)
    print(f"criterion 8: mean drift {worst:.1e} (relative) over {len(recs)} windows")
    assert worst <= 1e-9 * n
    assert all(r["connected"] for r in recs)


@criterion(8, "consensus fusion and deviation ordering")
def test_criterion_8_spread_contraction(nash_run):
    recs = [r for r in nash_run.tracker.windows if r["spread_before"] > 0]
    ratios = np.array([r["spread_after"] / r["spread_before"] for r in recs])
    print(f"criterion 8: post-window spread ratio min {ratios.min():.3f}, max {ratios.max():.3f}, "
          f"{int((ratios < 1e-3).sum())}/{len(ratios)} windows below 1e-3")
    assert (ratios < 1).all()
    assert (ratios < 1e-3).all()


@criterion(8, "consensus fusion and deviation ordering")
def test_criterion_8_deviation_ordering(plant, nash_run, horizon):
    rows = {"nash": summarize(nash_run, plant, horizon)}
    for m in ("pairwise", "alltime"):
        rows[m] = summarize(run_scheme(plant, m, horizon=horizon), plant, horizon)
    print("criterion 8: max deviation " + ", ".join(f"{m} {r['max_dev']:.3f}" for m, r in rows.items()))
    assert rows["nash"]["max_dev"] <= rows["pairwise"]["max_dev"]
    assert rows["nash"]["max_dev"] <= rows["alltime"]["max_dev"]


# 9 -------------------------------------------------------------------------------------------

@criterion(9, "identical scenario and seed give byte-identical event logs")
def test_criterion_9_determinism(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["run", "plant", "--seed", "0", "--out-dir", str(d)]) == 0
        outs.append((d / "events.jsonl").read_bytes())
    print(f"criterion 9: {len(outs[0])} bytes per event log, identical: {outs[0] == outs[1]}")
    assert outs[0] == outs[1]
