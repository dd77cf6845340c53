"""Command line: plan, run, compare and verify scenarios.

Exit codes: 0 success, 1 infeasible task or failed check, 2 invalid input.
The log level comes from ``TEAMCOMM_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .baselines import run_scheme
from .executor import realized_makespan, task_satisfied
from .game import InfeasibleWindowError
from .ltl import LTLSyntaxError
from .planner import InfeasibleTaskError, plan_for, plan_satisfies
from .report import (
    COMPARISON_COLUMNS,
    heatmap_svg,
    rendezvous_counts,
    summarize,
    window_results,
    write_agents,
    write_api,
    write_deviations,
    write_events,
    write_game_trace,
    write_metrics,
    write_rows,
)
from .scenario import BASELINES, Scenario, ScenarioError, bundled, load_scenario
from .workspace import TravelModel, UnreachableError

log = logging.getLogger("teamcomm")

EXIT_OK, EXIT_INFEASIBLE, EXIT_INVALID = 0, 1, 2
METHODS = ("nash", "static", "pairwise", "alltime")


def _scenario(args) -> Scenario:
    path = args.scenario
    if not Path(path).exists() and path in ("plant", "solo"):
        path = bundled(path)
    sc = load_scenario(path)
    params = sc.params
    if getattr(args, "seed", None) is not None:
        params = replace(params, seed=args.seed)
    if getattr(args, "max_iters", None) is not None:
        params = replace(params, K=args.max_iters)
    if getattr(args, "rounds", None) is not None:
        params = replace(params, rounds=args.rounds)
    sc = replace(sc, params=params)
    if getattr(args, "baseline", None):
        sc = sc.with_baseline(args.baseline)
    return sc


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_plan(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    tr = TravelModel(sc.workspace, sc.motion)
    for a in sc.agents:
        plan = plan_for(a, sc.workspace, tr)
        doc = plan.to_dict() | {"satisfies": plan_satisfies(plan, a)}
        (out / f"plan_agent{a.id}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"agent {a.id}: makespan {plan.makespan:.3f} s, loop of {len(plan.suffix)} states")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    trace = run_scheme(sc, sc.baseline, rounds=sc.params.rounds)
    windows = window_results(trace)
    write_events(trace, out / "events.jsonl")
    write_game_trace(trace, out / "game_trace.jsonl")
    write_metrics(trace, out / "metrics.csv", windows)
    write_agents(trace, sc, out / "agents.csv")
    (out / "topology_heatmap.svg").write_text(heatmap_svg(sc.workspace, rendezvous_counts(trace)))
    if sc.signal is not None and trace.tracker is not None:
        write_api(trace, sc, out / "api.csv")
    passed = sum(windows)
    print(f"{sc.baseline}: {len(trace.events)} events, windows passed {passed}/{len(windows)}, end {trace.end:.1f} s")
    return EXIT_OK


def cmd_compare(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    if sc.signal is None:
        log.warning("scenario has no signal model; deviation columns stay empty")
    rounds = sc.params.rounds
    horizon = rounds * sc.params.Tc + sc.params.Dc
    traces, rows, failed = {}, [], 0
    for m in METHODS:
        try:
            traces[m] = run_scheme(sc, m, rounds=rounds, horizon=horizon)
            rows.append(summarize(traces[m], sc, horizon))
        except (InfeasibleWindowError, InfeasibleTaskError, RuntimeError, ValueError) as e:
            log.error("%s failed: %s", m, e)
            rows.append({"method": m})
            failed += 1
    write_rows(out / "comparison.csv", COMPARISON_COLUMNS, rows)
    if sc.signal is not None:
        write_deviations(traces, sc, horizon, out / "deviations.csv")
    for r in rows:
        print(", ".join(f"{k}={r.get(k, '')}" for k in COMPARISON_COLUMNS))
    return EXIT_INFEASIBLE if failed else EXIT_OK


def cmd_verify(args) -> int:
    sc = _scenario(args)
    trace = run_scheme(sc, sc.baseline, rounds=sc.params.rounds)
    windows = window_results(trace)
    ok = True
    for a in sc.agents:
        plan = trace.plans[a.id]
        good = plan_satisfies(plan, a) and task_satisfied(trace, a, plan)
        xi = realized_makespan(trace, a.id)
        print(f"agent {a.id}: task {'ok' if good else 'FAILED'}, makespan {xi:.3f} s")
        ok &= good
    print(f"windows passed {sum(windows)}/{len(windows)}")
    ok &= all(windows)
    return EXIT_OK if ok else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teamcomm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("plan", cmd_plan, "synthesize and dump each agent's plan"),
        ("run", cmd_run, "simulate one scheme and write traces and metrics"),
        ("compare", cmd_compare, "run every scheme and tabulate the results"),
        ("verify", cmd_verify, "simulate and check tasks and communication windows"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("scenario", help="scenario JSON file, or 'plant' / 'solo' for the bundled ones")
        s.add_argument("--seed", type=int)
        if name != "plan":
            s.add_argument("--rounds", type=int)
            s.add_argument("--max-iters", type=int, help="iteration cap of the best-response search")
        if name in ("run", "verify"):
            s.add_argument("--baseline", choices=BASELINES)
        if name != "verify":
            s.add_argument("--out-dir", default="out")
        s.set_defaults(func=fn)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("TEAMCOMM_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, LTLSyntaxError, UnreachableError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (InfeasibleTaskError, InfeasibleWindowError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
