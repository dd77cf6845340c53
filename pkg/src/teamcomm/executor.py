"""Discrete-event execution of local plans interleaved with rendezvous rounds.

Round 0 is a team rendezvous at the start positions at t = 0.  Whenever the
last group of round r - 1 starts communicating, the groups of round r solve
their games from the agents' realized state; each agent then runs subtasks
up to its insertion index, detours to its rendezvous cell, waits for the
rest of its group and stays put for ``Dc`` seconds.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .consensus import STEP_RATE, EstimateTracker
from .game import (
    RoundGame,
    Strategy,
    TeamStrategy,
    nash_iterate,
    potential,
    unroll,
)
from .ltl import nba_accepts_lasso, translate_to_nba
from .planner import IDLE, AgentSpec, PrefixSuffixPlan, plan_for
from .scenario import Scenario
from .workspace import EPS, TravelModel, proximity_adjacency, turn_angle, direction_heading

log = logging.getLogger(__name__)

SAMPLE_DT = 0.1


class HorizonExceeded(RuntimeError):
    pass


@dataclass
class GroupRecord:
    round: int
    agents: list[int]
    planned_tc: float = 0.0
    phi_initial: float = 0.0
    phi_final: float = 0.0
    iterations: int = 0
    wall_clock: float = 0.0
    strategy: TeamStrategy | None = None
    arrivals: dict = field(default_factory=dict)
    realized_tc: float | None = None
    violation: bool = False

    @property
    def extra(self) -> dict[int, float]:
        """Realized additional time per agent (detour plus waiting)."""
        if self.strategy is None or self.realized_tc is None:
            return {a: 0.0 for a in self.agents}
        return {s.agent: s.delta + (self.realized_tc - self.arrivals[s.agent]) for s in self.strategy.strategies}


@dataclass
class ConnectivityLog:
    times: np.ndarray
    connected: np.ndarray
    dt: float = SAMPLE_DT

    def intervals(self) -> list[tuple[float, float]]:
        """Maximal runs of connected samples as closed time intervals."""
        out = []
        start = last = None
        for t, c in zip(self.times, self.connected):
            if c and start is None:
                start = t
            elif not c and start is not None:
                out.append((start, last))
                start = None
            last = t
        if start is not None:
            out.append((start, last))
        return [(float(a), float(b)) for a, b in out]

    @property
    def fraction(self) -> float:
        return float(np.mean(self.connected)) if len(self.connected) else 1.0


@dataclass
class ExecutionTrace:
    scheme: str
    agents: list[int]
    events: list[dict]
    satisfactions: dict[int, list[float]]
    keyframes: dict[int, list[tuple[float, float, float]]]
    groups: list[GroupRecord]
    game_trace: list[dict]
    end: float
    R: float
    Tc: float
    Dc: float
    rounds: int
    tracker: EstimateTracker | None = None
    plans: dict[int, PrefixSuffixPlan] = field(default_factory=dict)

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def positions(self, times: np.ndarray) -> np.ndarray:
        """Agent positions ``[t, agent, xy]`` by interpolating the keyframes."""
        out = np.empty((len(times), len(self.agents), 2))
        for k, a in enumerate(self.agents):
            kf = np.array(self.keyframes[a])
            out[:, k, 0] = np.interp(times, kf[:, 0], kf[:, 1])
            out[:, k, 1] = np.interp(times, kf[:, 0], kf[:, 2])
        return out

    def connectivity(self, dt: float = SAMPLE_DT) -> ConnectivityLog:
        ticks = np.arange(0.0, self.end + dt / 2, dt)
        marks = [e["t"] for e in self.events if e["kind"] in ("comm_start", "comm_end")]
        times = np.unique(np.concatenate([ticks, np.array(marks, dtype=float)]))
        times = times[times <= self.end]
        pos = self.positions(times)
        d = np.linalg.norm(pos[:, :, None, :] - pos[:, None, :, :], axis=-1)
        reach = d <= self.R + EPS
        n = len(self.agents)
        for _ in range(max(1, math.ceil(math.log2(max(n, 2))))):
            reach = np.matmul(reach.astype(np.int32), reach.astype(np.int32)) > 0
        return ConnectivityLog(times, reach[:, 0, :].all(axis=1), dt)

    def completed(self, agent: int) -> list[dict]:
        return [e for e in self.events if e["kind"] == "subtask_done" and e["agent"] == agent]

    def comm_events(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "comm_start"]


def verify_sufficient_communication(log: ConnectivityLog, Tc: float, Dc: float, windows: int) -> list[bool]:
    """Window r passes iff some t' in [r Tc, (r+1) Tc) starts a connected stretch of length Dc."""
    if len(log.times) > 1 and float(np.max(np.diff(log.times))) > log.dt + 1e-9:
        raise ValueError("connectivity log has gaps wider than its tick")
    ivs = log.intervals()
    out = []
    for r in range(windows):
        lo, hi = r * Tc, (r + 1) * Tc
        ok = False
        for a, b in ivs:
            t0 = max(a, lo)
            if t0 < hi and t0 + Dc <= b + 1e-9:
                ok = True
                break
        out.append(ok)
    return out


def realized_makespan(trace: ExecutionTrace, agent: int) -> float:
    ts = trace.satisfactions.get(agent, [])
    if len(ts) < 2:
        raise ValueError(f"agent {agent}: fewer than two satisfaction instants")
    return max(b - a for a, b in zip(ts, ts[1:]))


def realized_lasso(trace: ExecutionTrace, agent: int, plan: PrefixSuffixPlan):
    """Split the realized label word into prefix and one loop, checking that
    every full loop repetition matches the first."""
    done = trace.completed(agent)
    labels = [frozenset() if e["action"] == IDLE else frozenset([f"{e['region']}.{e['action']}"]) for e in done]
    k, L = plan.loop_start, len(plan.suffix)
    # completions start at global index 1; the initial state is not read
    prefix = labels[: k - 1]
    body = labels[k - 1 :]
    reps = len(body) // L
    if reps == 0:
        raise ValueError(f"agent {agent}: no complete loop in the horizon")
    loops = [body[m * L : (m + 1) * L] for m in range(reps)]
    if any(lp != loops[0] for lp in loops):
        raise ValueError(f"agent {agent}: realized loops differ")
    return prefix, loops[0], reps


def task_satisfied(trace: ExecutionTrace, spec: AgentSpec, plan: PrefixSuffixPlan) -> bool:
    u, v, _ = realized_lasso(trace, spec.id, plan)
    return nba_accepts_lasso(translate_to_nba(spec.formula()), u, v)


def chain_matchings(pairs: Sequence[tuple[int, int]]) -> list[list[tuple[int, int]]]:
    """Greedy edge colouring of the pairing graph into matchings."""
    colours: list[list[tuple[int, int]]] = []
    for a, b in pairs:
        for m in colours:
            if all(a not in e and b not in e for e in m):
                m.append((a, b))
                break
        else:
            colours.append([(a, b)])
    return colours


class _Group:
    def __init__(self, record: GroupRecord):
        self.record = record
        self.waiting: dict[int, Iterator] = {}


class Simulator:
    """Event-driven executor shared by the game scheme and the static and
    pair-wise baselines (they differ only in how rounds are grouped and
    solved)."""

    def __init__(
        self,
        sc: Scenario,
        scheme: str | None = None,
        rounds: int | None = None,
        plans: Mapping[int, PrefixSuffixPlan] | None = None,
        perturb: Mapping[tuple[int, int], float] | None = None,
        max_iters: int | None = None,
        message_rounds: bool = False,
    ):
        self.sc = sc
        self.scheme = scheme or sc.baseline
        if self.scheme not in ("nash", "static", "pairwise"):
            raise ValueError(f"scheme {self.scheme!r} is not run by the rendezvous executor")
        self.rounds = sc.params.rounds if rounds is None else rounds
        self.K = sc.params.K if max_iters is None else max_iters
        self.mode = "messages" if message_rounds else "direct"
        self.perturb = dict(perturb or {})
        self.w = sc.workspace
        self.travel: dict = {}
        self.specs = {a.id: a for a in sc.agents}
        self.ids = [a.id for a in sc.agents]
        self.pos = {a: k for k, a in enumerate(self.ids)}
        self.plans = dict(plans) if plans else {a.id: plan_for(a, self.w, self._travel(a)) for a in sc.agents}
        self.matchings = chain_matchings(sc.chain_pairs()) if self.scheme == "pairwise" else []
        self.tracker = (
            EstimateTracker(len(self.ids), sc.signal, sc.estimate_mode) if sc.signal is not None else None
        )

    def _travel(self, spec: AgentSpec) -> TravelModel:
        key = spec.motion
        if key not in self.travel:
            self.travel[key] = TravelModel(self.w, spec.motion)
        return self.travel[key]

    def groups_of(self, r: int) -> list[list[int]]:
        if r == 0 or self.scheme != "pairwise":
            return [list(self.ids)]
        if not self.matchings:
            return [list(self.ids)]
        return [list(e) for e in self.matchings[(r - 1) % len(self.matchings)]]

    # event loop ---------------------------------------------------------------

    def _at(self, t: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._q, (t, self._seq, fn))
        self._seq += 1

    def _emit(self, kind: str, **kw) -> None:
        kw.update(t=self.now, kind=kind)
        self.events.append(kw)

    def _step(self, proc: Iterator, value=None) -> None:
        try:
            cmd = proc.send(value)
        except StopIteration:
            return
        if isinstance(cmd, _Group):
            return
        self._at(self.now + cmd, lambda: self._step(proc))

    def run(self) -> ExecutionTrace:
        self._q: list = []
        self._seq = 0
        self.now = 0.0
        self.events: list[dict] = []
        self.records: list[GroupRecord] = []
        self.game_trace: list[dict] = []
        self.sched: dict[int, list[tuple[Strategy, _Group]]] = {a: [] for a in self.ids}
        self.anchor: dict[int, tuple] = {}
        self.started: dict[int, int] = {}
        self.open_groups: dict[int, int] = {}
        self.satisfactions = {a: [] for a in self.ids}
        self.keyframes = {a: [(0.0, *self.w.center(self.specs[a].start))] for a in self.ids}
        self.stopped = False

        g0 = _Group(GroupRecord(0, list(self.ids), planned_tc=0.0))
        self.records.append(g0.record)
        self.open_groups[0] = 1
        for a in self.ids:
            self.sched[a].append((None, g0))
        self._procs = {a: self._agent(a) for a in self.ids}
        for p in self._procs.values():
            self._at(0.0, lambda p=p: self._step(p))
        while self._q and not self.stopped:
            t, _, fn = heapq.heappop(self._q)
            self.now = t
            fn()
        return ExecutionTrace(
            self.scheme, list(self.ids), self.events, self.satisfactions, self.keyframes, self.records,
            self.game_trace, self.now, self.sc.params.R, self.sc.params.Tc, self.sc.params.Dc, self.rounds,
            self.tracker, dict(self.plans),
        )

    # agents ---------------------------------------------------------------------

    def _move(self, a: int, cell, heading, target, dock):
        tr = self._travel(self.specs[a])
        dt, h_out = tr.leg(cell, heading, target, dock)
        if target != cell or dt > 0:
            self._keyframes(a, tr, cell, heading, target, dock)
        return dt, h_out

    def _keyframes(self, a, tr, cell, heading, target, dock):
        kf = self.keyframes[a]
        t = self.now
        kf.append((t, *self.w.center(cell)))
        p = tr.path(cell, target)
        seg = self.w.cell_size
        h = heading
        for k, nxt in zip(p.directions, p.cells[1:]):
            hk = direction_heading(k)
            t += turn_angle(h, hk) / tr.motion.omega
            t += seg / tr.motion.v
            kf.append((t, *self.w.center(nxt)))
            h = hk

    def _agent(self, a: int):
        spec, plan = self.specs[a], self.plans[a]
        cell, heading = spec.start, spec.heading
        g = 1
        while not self.stopped:
            queue = self.sched[a]
            if queue and (queue[0][0] is None or queue[0][0].h == g - 1):
                s, grp = queue.pop(0)
                if s is not None:
                    self._emit("move_start", agent=a, to=list(s.cell), purpose="rendezvous", round=grp.record.round)
                    dt, heading = self._move(a, cell, heading, s.cell, None)
                    yield dt
                    cell = s.cell
                    self._emit("move_end", agent=a, cell=list(cell))
                self._emit("arrive_rendezvous", agent=a, cell=list(cell), round=grp.record.round)
                grp.record.arrivals[a] = self.now
                yield from self._wait(a, grp, cell, heading, g)
                continue
            if queue and queue[0][0].h < g - 1:
                raise RuntimeError(f"agent {a} passed its insertion index {queue[0][0].h}")
            st = plan.state(g)
            self._emit("move_start", agent=a, to=list(st.cell), index=g, purpose="subtask")
            dt, heading = self._move(a, cell, heading, st.cell, st.heading)
            yield dt
            cell = st.cell
            self._emit("move_end", agent=a, cell=list(cell), index=g)
            self._emit("action_start", agent=a, action=st.action, region=st.region, index=g)
            yield spec.duration(st.action) + self.perturb.get((a, g), 0.0)
            self._emit("action_end", agent=a, action=st.action, region=st.region, index=g)
            self._emit("subtask_done", agent=a, action=st.action, region=st.region, index=g)
            if self.tracker is not None and st.action == self.sc.monitor_action:
                self.tracker.reading(self.pos[a], self.now)
            if plan.is_satisfaction_index(g):
                self.satisfactions[a].append(self.now)
                self._emit("satisfied", agent=a, index=g)
            g += 1
            self.anchor[a] = (cell, heading, self.now, g)

    def _wait(self, a, grp: _Group, cell, heading, g):
        grp.waiting[a] = (cell, heading, g)
        if len(grp.waiting) == len(grp.record.agents):
            self._at(self.now, lambda: self._start_comm(grp))
        yield grp

    def _start_comm(self, grp: _Group) -> None:
        rec = grp.record
        r = rec.round
        rec.realized_tc = self.now
        lo, hi = r * self.sc.params.Tc, (r + 1) * self.sc.params.Tc
        self._emit("comm_start", agents=rec.agents, round=r, cells=[list(grp.waiting[a][0]) for a in rec.agents])
        if not lo <= self.now < hi:
            rec.violation = True
            self._emit("window_violation", round=r, agents=rec.agents)
            log.warning("round %d communication at %.3f s outside [%g, %g)", r, self.now, lo, hi)
        end = self.now + self.sc.params.Dc
        for a in rec.agents:
            cell, heading, g = grp.waiting[a]
            self.anchor[a] = (cell, heading, end, g)
        self.started[r] = self.started.get(r, 0) + 1
        if self.started[r] == len(self.groups_of(r)) and r < self.rounds:
            self._plan_round(r + 1)
        self._at(end, lambda: self._end_comm(grp))

    def _end_comm(self, grp: _Group) -> None:
        rec = grp.record
        self._emit("comm_end", agents=rec.agents, round=rec.round)
        if self.tracker is not None:
            cells = [grp.waiting[a][0] for a in rec.agents]
            adj = proximity_adjacency([self.w.center(c) for c in cells], self.sc.params.R)
            steps = int(round(STEP_RATE * self.sc.params.Dc))
            self.tracker.fuse([self.pos[a] for a in rec.agents], adj, self.now, steps)
        self.open_groups[rec.round] -= 1
        if rec.round == self.rounds and self.open_groups[rec.round] == 0:
            self.stopped = True
            return
        for a in rec.agents:
            proc = self._procs[a]
            self._at(self.now, lambda proc=proc: self._step(proc))

    # coordination ----------------------------------------------------------------

    def _plan_round(self, r: int) -> None:
        groups = self.groups_of(r)
        self.open_groups[r] = len(groups)
        Tc = self.sc.params.Tc
        for members in groups:
            t0 = time.perf_counter()
            plans, travels = [], []
            for a in members:
                cell, heading, depart, first = self.anchor[a]
                spec = self.specs[a]
                tr = self._travel(spec)
                plans.append(unroll(self.plans[a], spec.actions, tr, cell, heading, depart, first, (r + 1) * Tc))
                travels.append(tr)
            game = RoundGame(r, plans, travels, self.w, Tc, self.sc.params.R, not_before=self.now)
            if self.scheme == "static":
                S0 = game.fixed_cells_strategy([self.specs[a].start for a in members])
                S, steps = S0, []
            else:
                S0 = game.initial_strategy()
                S, steps = nash_iterate(game, S0, self.K, self.mode)
            rec = GroupRecord(
                r, list(members), planned_tc=S.t_c, phi_initial=potential(S0), phi_final=potential(S),
                iterations=len(steps), wall_clock=time.perf_counter() - t0, strategy=S,
            )
            self.records.append(rec)
            for e in steps:
                self.game_trace.append({"round": r, **e.to_dict()})
            grp = _Group(rec)
            for s in S.strategies:
                self.sched[s.agent].append((s, grp))
            self._emit(
                "schedule", round=r, agents=list(members), planned_tc=S.t_c,
                phi_initial=rec.phi_initial, phi=rec.phi_final, iterations=rec.iterations,
                strategies=[{"agent": s.agent, "cell": list(s.cell), "h": s.h} for s in S.strategies],
            )


def run_simulation(sc: Scenario, rounds: int | None = None, **kw) -> ExecutionTrace:
    return Simulator(sc, rounds=rounds, **kw).run()
