"""Comparison schemes: static rendezvous, pair-wise meetings, all-time convoy."""

from __future__ import annotations

import enum
import math
from typing import Mapping

from .consensus import CONSENSUS_PERIOD, STEP_RATE, EstimateTracker
from .executor import ExecutionTrace, Simulator, chain_matchings, run_simulation
from .game import RoundGame, TeamStrategy, unroll
from .planner import IDLE, PrefixSuffixPlan, plan_for
from .scenario import Scenario
from .workspace import TravelModel, direction_heading, proximity_adjacency, turn_angle

SPACING = 0.9  # convoy spacing as a fraction of the communication range


class BaselineKind(enum.Enum):
    STATIC = "static"
    PAIRWISE = "pairwise"
    ALLTIME = "alltime"


def static_schedule(
    sc: Scenario, r: int, plans: Mapping[int, PrefixSuffixPlan] | None = None, anchors: Mapping | None = None
) -> TeamStrategy:
    """Everyone returns to its own start cell; only the insertion indices are optimized.

    ``anchors`` maps agent id to ``(cell, heading, depart, next index)``;
    by default the agents leave their start cells after the first rendezvous.
    """
    w, p = sc.workspace, sc.params
    tr = {}
    plans = plans or {a.id: plan_for(a, w, tr.setdefault(a.motion, TravelModel(w, a.motion))) for a in sc.agents}
    us, travels = [], []
    for a in sc.agents:
        t = tr.setdefault(a.motion, TravelModel(w, a.motion))
        cell, heading, depart, first = (anchors or {}).get(a.id, (a.start, a.heading, p.Dc, 1))
        us.append(unroll(plans[a.id], a.actions, t, cell, heading, depart, first, (r + 1) * p.Tc))
        travels.append(t)
    game = RoundGame(r, us, travels, w, p.Tc, p.R)
    return game.fixed_cells_strategy([a.start for a in sc.agents])


def pairwise_schedule(sc: Scenario) -> list[list[tuple[int, int]]]:
    """Pairs meeting in successive rounds; round r uses entry ``(r - 1) % len``."""
    return chain_matchings(sc.chain_pairs())


class _Convoy:
    """The team travels as a chain behind a head agent; follower m replays
    the head's motion ``m * spacing / v`` seconds later, so neighbours in the
    chain never drift further apart than the spacing."""

    def __init__(self, sc: Scenario, plans: Mapping[int, PrefixSuffixPlan]):
        self.sc, self.plans = sc, plans
        self.w = sc.workspace
        self.ids = [a.id for a in sc.agents]
        self.specs = {a.id: a for a in sc.agents}
        self.lag = SPACING * sc.params.R / sc.params.v
        self.tr = TravelModel(self.w, sc.motion)
        self.events: list[dict] = []
        lead = self.specs[self.ids[0]]
        self.cell, self.heading = lead.start, lead.heading
        self.keyframes = {a: [(0.0, *self.w.center(self.cell))] for a in self.ids}
        self.satisfactions = {a: [] for a in self.ids}
        self.readings: list[tuple[float, int]] = []

    def emit(self, t: float, kind: str, **kw) -> None:
        kw.update(t=t, kind=kind)
        self.events.append(kw)

    def leg(self, t: float, target, dock) -> float:
        dt, h_out = self.tr.leg(self.cell, self.heading, target, dock)
        if target == self.cell:
            self.heading = h_out
            return t + dt
        p = self.tr.path(self.cell, target)
        head = [(t, *self.w.center(self.cell))]
        tk, h = t, self.heading
        for k, nxt in zip(p.directions, p.cells[1:]):
            hk = direction_heading(k)
            tk += turn_angle(h, hk) / self.sc.params.omega
            tk += self.w.cell_size / self.sc.params.v
            head.append((tk, *self.w.center(nxt)))
            h = hk
        for m, a in enumerate(self.ids):
            shift = m * self.lag
            self.emit(t + shift, "move_start", agent=a, to=list(target), purpose="convoy")
            self.keyframes[a].append((t, *self.w.center(self.cell)))
            self.keyframes[a].extend((tt + shift, x, y) for tt, x, y in head)
            self.emit(head[-1][0] + shift, "move_end", agent=a, cell=list(target))
        self.cell, self.heading = target, h_out
        # the convoy closes up before anyone acts
        return t + dt + (len(self.ids) - 1) * self.lag

    def run(self, horizon: float) -> float:
        nxt = {a: 1 for a in self.ids}
        t, turn = 0.0, 0
        while t < horizon:
            a = self.ids[turn % len(self.ids)]
            spec, plan = self.specs[a], self.plans[a]
            while True:
                g = nxt[a]
                st = plan.state(g)
                t = self.leg(t, st.cell, st.heading)
                self.emit(t, "action_start", agent=a, action=st.action, region=st.region, index=g)
                t += spec.duration(st.action)
                self.emit(t, "action_end", agent=a, action=st.action, region=st.region, index=g)
                self.emit(t, "subtask_done", agent=a, action=st.action, region=st.region, index=g)
                if st.action == self.sc.monitor_action:
                    self.readings.append((t, a))
                if plan.is_satisfaction_index(g):
                    self.satisfactions[a].append(t)
                    self.emit(t, "satisfied", agent=a, index=g)
                nxt[a] = g + 1
                if st.action != IDLE:
                    break
            turn += 1
        return t


def alltime_schedule(
    sc: Scenario, horizon: float | None = None, plans: Mapping[int, PrefixSuffixPlan] | None = None
) -> ExecutionTrace:
    """Round-robin convoy: the team stays connected while one agent at a time
    advances its plan to its next action."""
    p = sc.params
    horizon = p.rounds * p.Tc + p.Dc if horizon is None else horizon
    if plans is None:
        tr = TravelModel(sc.workspace, sc.motion)
        plans = {a.id: plan_for(a, sc.workspace, tr) for a in sc.agents}
    convoy = _Convoy(sc, plans)
    end = convoy.run(horizon)
    order = {id(e): k for k, e in enumerate(convoy.events)}
    events = sorted(convoy.events, key=lambda e: (e["t"], order[id(e)]))
    trace = ExecutionTrace(
        "alltime", list(convoy.ids), events, convoy.satisfactions, convoy.keyframes, [], [],
        end, p.R, p.Tc, p.Dc, p.rounds, None, dict(plans),
    )
    if sc.signal is not None:
        trace.tracker = _continuous_consensus(sc, trace, convoy.readings)
    return trace


def _continuous_consensus(sc: Scenario, trace: ExecutionTrace, readings) -> EstimateTracker:
    """Consensus sessions every second over the live proximity graph."""
    pos = {a: k for k, a in enumerate(trace.agents)}
    tracker = EstimateTracker(len(trace.agents), sc.signal, sc.estimate_mode)
    steps = int(round(CONSENSUS_PERIOD * STEP_RATE))
    ticks = [k * CONSENSUS_PERIOD for k in range(1, int(math.floor(trace.end / CONSENSUS_PERIOD)) + 1)]
    readings = sorted(readings)
    xys = trace.positions(ticks)
    j = 0
    for tick, xy in zip(ticks, xys):
        while j < len(readings) and readings[j][0] <= tick:
            tracker.reading(pos[readings[j][1]], readings[j][0])
            j += 1
        tracker.fuse(list(range(len(trace.agents))), proximity_adjacency(xy, sc.params.R), tick, steps)
    return tracker


def run_scheme(sc: Scenario, kind: str, rounds: int | None = None, horizon: float | None = None) -> ExecutionTrace:
    if kind == "alltime":
        p = sc.params
        r = p.rounds if rounds is None else rounds
        return alltime_schedule(sc, horizon if horizon is not None else r * p.Tc + p.Dc)
    return run_simulation(sc.with_baseline(kind), rounds=rounds)


__all__ = [
    "BaselineKind",
    "Simulator",
    "alltime_schedule",
    "pairwise_schedule",
    "run_scheme",
    "static_schedule",
]
