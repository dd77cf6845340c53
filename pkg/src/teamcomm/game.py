"""The communication-scheduling potential game.

Each agent picks a rendezvous cell ``z`` and an insertion index ``h`` (meet
after finishing subtask ``h``).  With arrival times ``t_i`` and detours
``delta_i`` the team meets at ``t_c = max t_i``; the potential is
``sum(delta_i + t_c - t_i)`` and each agent's cost ``delta_i + N t_c - t_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .planner import PrefixSuffixPlan
from .workspace import EPS, Cell, TravelModel, Workspace, direction_heading, is_connected, proximity_adjacency

IMPROVE_TOL = 1e-9
_DIR_INDEX = {direction_heading(k): k for k in range(4)}


class InfeasibleWindowError(RuntimeError):
    def __init__(self, round_: int, agents: Sequence[int]):
        super().__init__(f"round {round_}: no rendezvous fits the window (agents {list(agents)})")
        self.round = round_
        self.agents = list(agents)


@dataclass(frozen=True)
class Strategy:
    agent: int
    cell: Cell
    h: int
    arrival: float
    delta: float


@dataclass(frozen=True)
class TeamStrategy:
    round: int
    strategies: tuple[Strategy, ...]

    @property
    def t_c(self) -> float:
        return max(s.arrival for s in self.strategies)

    @property
    def cells(self) -> list[Cell]:
        return [s.cell for s in self.strategies]

    @property
    def agents(self) -> list[int]:
        return [s.agent for s in self.strategies]

    def position(self, agent: int) -> int:
        return self.agents.index(agent)

    def extra(self, agent: int) -> float:
        """Additional time of one agent: detour plus waiting."""
        s = self.strategies[self.position(agent)]
        return s.delta + (self.t_c - s.arrival)

    def with_strategy(self, s: Strategy) -> "TeamStrategy":
        k = self.position(s.agent)
        return replace(self, strategies=self.strategies[:k] + (s,) + self.strategies[k + 1 :])


def potential(S: TeamStrategy) -> float:
    tc = S.t_c
    return sum(s.delta + tc - s.arrival for s in S.strategies)


def cost(agent: int, S: TeamStrategy) -> float:
    s = S.strategies[S.position(agent)]
    return s.delta + len(S.strategies) * S.t_c - s.arrival


@dataclass(frozen=True)
class UnrolledPlan:
    """Subtask completion times after the agent's last rendezvous.

    Entry ``k`` describes global plan index ``first + k``: the region cell,
    the docking heading and the completion time, timed from ``origin`` at
    ``depart`` exactly as the executor advances its clock.
    """

    agent: int
    origin: Cell
    origin_heading: float
    depart: float
    first: int
    cells: tuple[Cell, ...]
    headings: tuple[float, ...]
    times: tuple[float, ...]

    def index(self, h: int) -> int:
        return h - self.first

    def time_of(self, h: int) -> float:
        return self.times[h - self.first]

    def eligible(self, not_before: float, end: float) -> list[int]:
        """Global indices ``h`` finishing in ``(not_before, end)`` with a known successor."""
        return [
            self.first + k
            for k in range(len(self.times) - 1)
            if not_before < self.times[k] < end
        ]


def unroll(
    plan: PrefixSuffixPlan,
    durations: Mapping[str, float],
    travel: TravelModel,
    origin: Cell,
    heading: float,
    depart: float,
    first: int,
    until: float,
    extra: Mapping[int, float] | None = None,
) -> UnrolledPlan:
    """Time the plan from ``first`` on until one subtask ends at or after ``until``."""
    if plan.makespan <= 0:
        raise ValueError(f"agent {plan.agent}: plan loop takes no time")
    extra = extra or {}
    cells, headings, times = [], [], []
    cell, h, t = origin, heading, depart
    g = first
    while not times or times[-1] < until:
        s = plan.state(g)
        t += travel.leg(cell, h, s.cell, s.heading)[0]
        t += durations.get(s.action, 0.0) + extra.get(g, 0.0)
        cell, h = s.cell, s.heading
        cells.append(cell)
        headings.append(h)
        times.append(t)
        g += 1
    return UnrolledPlan(plan.agent, origin, heading, depart, first, tuple(cells), tuple(headings), tuple(times))


def additional_time(
    s: Strategy, team_tc: float, u: UnrolledPlan, travel: TravelModel
) -> tuple[float, float]:
    """Detour and total additional time of a strategy, from scalar legs."""
    k = u.index(s.h)
    here, th = u.cells[k], u.headings[k]
    nxt, tn = u.cells[k + 1], u.headings[k + 1]
    to_z, hz = travel.leg(here, th, s.cell)
    delta = to_z + travel.leg(s.cell, hz, nxt, tn)[0] - travel.leg(here, th, nxt, tn)[0]
    arrival = u.times[k] + to_z
    return delta, delta + (team_tc - arrival)


def candidate_region(i: int, Zc: Sequence[Cell], R: float, w: Workspace) -> list[Cell]:
    """Free cells within ``R`` of ``Zc[i]`` that keep the rendezvous graph connected."""
    others = [w.center(c) for k, c in enumerate(Zc) if k != i]
    out = []
    for z in w.free_cells:
        if w.distance(z, Zc[i]) <= R + EPS and is_connected(proximity_adjacency(others + [w.center(z)], R)):
            out.append(z)
    return out


@dataclass
class TraceEntry:
    iteration: int
    mover: int
    sigma: float
    potential: float
    cells: list[Cell]
    hops: int = 0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mover": self.mover,
            "sigma": self.sigma,
            "potential": self.potential,
            "cells": [list(c) for c in self.cells],
            "hops": self.hops,
        }


@dataclass
class RoundGame:
    """One round's game over a group of agents.

    ``A[k][j, z]`` is agent k's arrival at free cell z when meeting after its
    ``hs[k][j]``-th subtask and ``D[k][j, z]`` the matching detour.  Both
    tables come from the same cached legs the executor replays.
    """

    round: int
    plans: list[UnrolledPlan]
    travels: list[TravelModel]
    w: Workspace
    Tc: float
    R: float
    not_before: float = -math.inf
    hs: list[np.ndarray] = field(init=False)
    A: list[np.ndarray] = field(init=False)
    D: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        self.lo, self.hi = self.round * self.Tc, (self.round + 1) * self.Tc
        self.Z = self.w.free_cells
        self.zindex = {c: k for k, c in enumerate(self.Z)}
        self.centers = np.array([self.w.center(c) for c in self.Z])
        self.N = len(self.plans)
        self.hs, self.A, self.D = [], [], []
        missing = []
        for u, tr in zip(self.plans, self.travels):
            hs = u.eligible(self.not_before, self.hi)
            if not hs:
                missing.append(u.agent)
            A = np.empty((len(hs), len(self.Z)))
            D = np.empty_like(A)
            for j, h in enumerate(hs):
                A[j], D[j] = self._tables(u, tr, h)
            self.hs.append(np.array(hs, dtype=int))
            self.A.append(A)
            self.D.append(D)
        if missing:
            raise InfeasibleWindowError(self.round, missing)
        self._regions: dict = {}

    def _tables(self, u: UnrolledPlan, tr: TravelModel, h: int):
        k = u.index(h)
        here, th = u.cells[k], u.headings[k]
        nxt, tn = u.cells[k + 1], u.headings[k + 1]
        to_z, heads = tr.from_table(here, th)
        back = tr.to_table(nxt, tn)
        zi = self.zindex[here]
        dirs = np.array([_DIR_INDEX.get(hz, 0) for hz in heads])
        base = tr.leg(here, th, nxt, tn)[0]
        D = to_z + back[np.arange(len(self.Z)), dirs] - base
        # at the subtask's own cell the agent keeps its docking heading
        D[zi] = to_z[zi] + tr.leg(here, th, nxt, tn)[0] - base
        return u.times[k] + to_z, D

    @property
    def agents(self) -> list[int]:
        return [u.agent for u in self.plans]

    def strategy(self, k: int, h: int, cell: Cell) -> Strategy:
        j = int(np.searchsorted(self.hs[k], h))
        if j >= len(self.hs[k]) or self.hs[k][j] != h:
            raise ValueError(f"agent {self.plans[k].agent}: index {h} outside the round")
        z = self.zindex[cell]
        return Strategy(self.plans[k].agent, cell, int(h), float(self.A[k][j, z]), float(self.D[k][j, z]))

    def in_window(self, t: float) -> bool:
        return self.lo <= t < self.hi

    # joint minimization -------------------------------------------------

    def _joint(self, cols: list[np.ndarray]) -> TeamStrategy:
        """Exact minimum of the potential when agent k may only use the
        cells ``cols[k][c]`` for configuration c.

        The meeting time equals some agent's arrival, so we enumerate the
        agent j and row that define it; every other agent then independently
        takes its smallest ``delta - t`` among arrivals not later than that.
        """
        N, C = self.N, len(cols[0])
        prepared = []
        for k in range(N):
            Ak = self.A[k][:, cols[k]]
            Vk = self.D[k][:, cols[k]] - Ak
            order = np.argsort(Ak, axis=0, kind="stable")
            As = np.take_along_axis(Ak, order, 0)
            Vm = np.minimum.accumulate(np.take_along_axis(Vk, order, 0), axis=0)
            prepared.append((Ak, Vk, As, Vm))
        best = None
        for j in range(N):
            Aj, Vj = prepared[j][0], prepared[j][1]
            total = N * Aj + Vj
            ok = (Aj >= self.lo) & (Aj < self.hi)
            for k in range(N):
                if k == j:
                    continue
                As, Vm = prepared[k][2], prepared[k][3]
                cnt = (As[None, :, :] <= Aj[:, None, :]).sum(axis=1)
                got = Vm[np.maximum(cnt - 1, 0), np.arange(C)[None, :]]
                ok &= cnt > 0
                total = total + np.where(cnt > 0, got, 0.0)
            total = np.where(ok, total, np.inf)
            # ties: lowest configuration, then defining agent, then row
            rows = total.argmin(axis=0)
            vals = total[rows, np.arange(C)]
            for c in np.flatnonzero(np.isfinite(vals)):
                key = (vals[c], c, j, rows[c])
                if best is None or key < best:
                    best = key
        if best is None:
            raise InfeasibleWindowError(self.round, self.agents)
        _, c, j, row = best
        T = self.A[j][row, cols[j][c]]
        out = []
        for k in range(N):
            z = cols[k][c]
            if k == j:
                r = row
            else:
                Ak = self.A[k][:, z]
                V = np.where(Ak <= T, self.D[k][:, z] - Ak, np.inf)
                r = int(np.argmin(V))
            out.append(self.strategy(k, int(self.hs[k][r]), self.Z[z]))
        return TeamStrategy(self.round, tuple(out))

    def initial_strategy(self) -> TeamStrategy:
        """Everyone meets at one cell; the cell and indices minimize the potential."""
        allz = np.arange(len(self.Z))
        return self._joint([allz] * self.N)

    def fixed_cells_strategy(self, cells: Sequence[Cell]) -> TeamStrategy:
        """Best insertion indices when every agent's rendezvous cell is fixed."""
        return self._joint([np.array([self.zindex[c]]) for c in cells])

    # best response ----------------------------------------------------------

    def region(self, k: int, S: TeamStrategy) -> list[int]:
        cells = tuple(S.cells)
        key = (k, cells)
        hit = self._regions.get(key)
        if hit is None:
            here = np.array(self.w.center(cells[k]))
            d = np.hypot(*(self.centers - here).T)
            near = np.flatnonzero(d <= self.R + EPS)
            others = [self.w.center(c) for i, c in enumerate(cells) if i != k]
            keep = [z for z in near if is_connected(proximity_adjacency(others + [tuple(self.centers[z])], self.R))]
            hit = sorted(keep, key=lambda z: (d[z], self.Z[z]))
            self._regions[key] = hit
        return hit

    def best_response(self, k: int, S: TeamStrategy) -> tuple[float, Strategy]:
        cur = S.strategies[k]
        u_now = cost(cur.agent, S)
        others = max((s.arrival for i, s in enumerate(S.strategies) if i != k), default=-math.inf)
        U = np.array(self.region(k, S), dtype=int)
        if len(U) == 0:
            return 0.0, cur
        A = self.A[k][:, U]
        tc = np.maximum(A, others)
        sigma = self.D[k][:, U] + self.N * tc - A - u_now
        sigma = np.where((tc >= self.lo) & (tc < self.hi), sigma, np.inf)
        # columns are already ordered by (distance, cell); prefer smaller h
        flat = sigma.T.ravel()
        best = int(np.argmin(flat))
        s_best = float(flat[best])
        if not s_best < -IMPROVE_TOL:
            return 0.0, cur
        z, j = divmod(best, A.shape[0])
        return s_best, self.strategy(k, int(self.hs[k][j]), self.Z[U[z]])

    def topology(self, S: TeamStrategy) -> np.ndarray:
        return proximity_adjacency([self.w.center(c) for c in S.cells], self.R)


def _flood_min(values: list[tuple[float, int]], adj: np.ndarray) -> tuple[tuple[float, int], int]:
    """Min-reduction by neighbor exchange; returns the agreed value and hop count."""
    cur = list(values)
    hops = 0
    while True:
        nxt = [min([cur[i]] + [cur[j] for j in np.flatnonzero(adj[i])]) for i in range(len(cur))]
        if nxt == cur:
            break
        cur = nxt
        hops += 1
    if len(set(cur)) != 1:
        raise RuntimeError("rendezvous topology is disconnected")
    return cur[0], hops


def nash_iterate(
    game: RoundGame, S0: TeamStrategy, K: int = 500, mode: str = "direct"
) -> tuple[TeamStrategy, list[TraceEntry]]:
    """Best-response dynamics: each iteration the agent with the most
    negative improvement (lowest id on ties) switches; stops when nobody
    improves or after K iterations."""
    if mode not in ("direct", "messages"):
        raise ValueError(f"unknown mode {mode!r}")
    S = S0
    trace: list[TraceEntry] = []
    for it in range(K):
        responses = [game.best_response(k, S) for k in range(game.N)]
        hops = 0
        if mode == "direct":
            sigma, k = min((r[0], k) for k, r in enumerate(responses))
        else:
            (sigma, k), hops = _flood_min([(r[0], k) for k, r in enumerate(responses)], game.topology(S))
        if not sigma < 0:
            break
        S = S.with_strategy(responses[k][1])
        trace.append(TraceEntry(it + 1, game.plans[k].agent, sigma, potential(S), S.cells, hops))
    return S, trace


def is_nash(game: RoundGame, S: TeamStrategy, cap: int = 200_000) -> bool:
    """Exhaustive unilateral-deviation check from scalar legs.

    Deliberately avoids the game's tables: arrivals and detours are rebuilt
    from ``additional_time`` and connectivity by a plain graph search.
    """
    w, R, N = game.w, game.R, game.N
    seen = 0
    for k, (u, tr) in enumerate(zip(game.plans, game.travels)):
        s = S.strategies[k]
        u_now = s.delta + N * S.t_c - s.arrival
        others = [x for i, x in enumerate(S.strategies) if i != k]
        others_tc = max((x.arrival for x in others), default=-math.inf)
        for z in w.free_cells:
            if w.distance(z, s.cell) > R + EPS:
                continue
            if not _linked([x.cell for x in others] + [z], R, w):
                continue
            for h in game.hs[k]:
                seen += 1
                if seen > cap:
                    raise RuntimeError(f"strategy space exceeds {cap} deviations")
                h = int(h)
                idx = u.index(h)
                arrival = u.times[idx] + tr.leg(u.cells[idx], u.headings[idx], z)[0]
                tc = max(others_tc, arrival)
                if not game.lo <= tc < game.hi:
                    continue
                delta, _ = additional_time(Strategy(u.agent, z, h, arrival, 0.0), tc, u, tr)
                if delta + N * tc - arrival - u_now < -IMPROVE_TOL:
                    return False
    return True


def _linked(cells: Sequence[Cell], R: float, w: Workspace) -> bool:
    todo, seen = [0], {0}
    while todo:
        a = todo.pop()
        for b in range(len(cells)):
            if b not in seen and w.distance(cells[a], cells[b]) <= R + EPS:
                seen.add(b)
                todo.append(b)
    return len(seen) == len(cells)
