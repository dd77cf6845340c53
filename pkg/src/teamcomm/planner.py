"""Local plan synthesis: transition system, product automaton, prefix-suffix plans."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .ltl import (
    NBA,
    Always,
    Eventually,
    Formula,
    is_sc_ltl,
    nba_accepts_lasso,
    parse_ltl,
    translate_to_nba,
)
from .workspace import Cell, MotionParams, Region, TravelModel, UnreachableError, Workspace

IDLE = "idle"
START = "start"


class InfeasibleTaskError(RuntimeError):
    def __init__(self, agent: int, reason: str):
        super().__init__(f"agent {agent}: {reason}")
        self.agent = agent


@dataclass(frozen=True)
class AgentSpec:
    id: int
    start: Cell
    heading: float
    regions: tuple[Region, ...]
    actions: Mapping[str, float]  # non-idle action -> duration (s)
    task: str
    motion: MotionParams = MotionParams()

    def __post_init__(self):
        names = [r.name for r in self.regions]
        if len(set(names)) != len(names):
            raise ValueError(f"agent {self.id}: duplicate region names")
        if START in names:
            raise ValueError(f"agent {self.id}: region name {START!r} is reserved")
        if IDLE in self.actions:
            raise ValueError(f"agent {self.id}: action {IDLE!r} is implicit")
        for a, d in self.actions.items():
            if d < 0:
                raise ValueError(f"agent {self.id}: negative duration for {a}")

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(f"{r.name}.{a}" for r in self.regions for a in self.actions)

    def duration(self, action: str) -> float:
        return 0.0 if action == IDLE else float(self.actions[action])

    def formula(self) -> Formula:
        return parse_ltl(self.task, self.alphabet)


def recurrent_cosafe_body(f: Formula) -> Formula | None:
    """Return the co-safe body if ``f`` has the shape ``[]<>(body)``."""
    if isinstance(f, Always) and isinstance(f.operand, Eventually) and is_sc_ltl(f.operand.operand):
        return f.operand.operand
    return None


@dataclass(frozen=True)
class TSState:
    region: str
    action: str
    cell: Cell
    heading: float

    @property
    def label(self) -> frozenset[str]:
        return frozenset() if self.action == IDLE else frozenset((f"{self.region}.{self.action}",))

    def __str__(self) -> str:
        return f"<{self.region},{self.action}>"


@dataclass
class TransitionSystem:
    agent: int
    states: list[TSState]
    initial: int
    edges: list[list[tuple[int, float]]]

    def cost(self, a: int, b: int) -> float:
        for s, c in self.edges[a]:
            if s == b:
                return c
        raise KeyError((a, b))


def build_transition_system(
    spec: AgentSpec, w: Workspace, travel: TravelModel | None = None
) -> TransitionSystem:
    """Motion-and-action model with transition costs T(m, n) + D(a_h).

    ``<m,a> -> <n,idle>`` whenever n is reachable from m, and
    ``<m,a> -> <m,b>`` for any actions at the same region; exact self-loops
    are excluded.  Travel times dock at each region's fixed heading.
    """
    travel = travel or TravelModel(w, spec.motion)
    actions = [IDLE, *spec.actions]
    states = []
    initial = None
    for reg in spec.regions:
        if not w.is_free(reg.cell):
            raise UnreachableError(f"agent {spec.id}: region {reg.name} is not free")
        for a in actions:
            states.append(TSState(reg.name, a, reg.cell, reg.heading))
    for k, s in enumerate(states):
        if s.action == IDLE and s.cell == spec.start and s.heading == spec.heading:
            initial = k
            break
    if initial is None:
        states.insert(0, TSState(START, IDLE, spec.start, spec.heading))
        initial = 0
    w.check_connected([spec.start, *(r.cell for r in spec.regions)])

    edges: list[list[tuple[int, float]]] = [[] for _ in states]
    for i, s in enumerate(states):
        for j, t in enumerate(states):
            if i == j or t.region == START:
                continue
            if s.region == t.region:
                edges[i].append((j, 0.0 + spec.duration(t.action)))
            elif t.action == IDLE:
                edges[i].append((j, travel.leg(s.cell, s.heading, t.cell, t.heading)[0] + 0.0))
    return TransitionSystem(spec.id, states, initial, edges)


@dataclass
class Product:
    ts: TransitionSystem
    nba: NBA
    states: list[tuple[int, int]]
    edges: list[list[tuple[int, float]]]
    initial: list[int]
    accepting: list[int]

    def __len__(self) -> int:
        return len(self.states)


def build_product(ts: TransitionSystem, a: NBA) -> Product:
    """Reachable part of TS x NBA; the automaton reads the label of the target state."""
    if not a.initial:
        raise ValueError("automaton has no initial state")
    masks = [a.symbol_mask(s.label) for s in ts.states]
    index: dict[tuple[int, int], int] = {}
    states: list[tuple[int, int]] = []
    edges: list[list[tuple[int, float]]] = []

    def add(node: tuple[int, int]) -> int:
        if node not in index:
            index[node] = len(states)
            states.append(node)
            edges.append([])
        return index[node]

    initial = [add((ts.initial, q)) for q in sorted(a.initial)]
    k = 0
    while k < len(states):
        s, q = states[k]
        for t, c in ts.edges[s]:
            for q2 in a.successors(q, masks[t]):
                edges[k].append((add((t, q2)), c))
        k += 1
    accepting = [k for k, (_, q) in enumerate(states) if q in a.accepting]
    return Product(ts, a, states, edges, initial, accepting)


def _dijkstra(edges, sources):
    dist = {s: 0.0 for s in sources}
    parent: dict[int, int] = {}
    heap = [(0.0, s) for s in sorted(sources)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, c in edges[u]:
            nd = d + c
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, parent


def _walk(parent: dict[int, int], target: int) -> list[int]:
    path = [target]
    while path[-1] in parent:
        path.append(parent[path[-1]])
    path.reverse()
    return path


@dataclass(frozen=True)
class PrefixSuffixPlan:
    """An infinite plan ``prefix (suffix)^ω``.

    ``prefix_costs[j]`` is the cost of the step leaving ``prefix[j]`` (the
    last one enters ``suffix[0]``); ``suffix_costs[j]`` leaves ``suffix[j]``
    and the last one closes the loop.  ``suffix[0]`` is the accepting product
    state the loop was built around, so the plan passes it once per loop.
    """

    agent: int
    prefix: tuple[TSState, ...]
    suffix: tuple[TSState, ...]
    prefix_costs: tuple[float, ...]
    suffix_costs: tuple[float, ...]
    makespan: float
    nba_states: tuple[int, ...] = field(default=(), compare=False)
    accepting: frozenset[int] = field(default=frozenset(), compare=False)

    @property
    def loop_start(self) -> int:
        return len(self.prefix)

    def state(self, g: int) -> TSState:
        k = len(self.prefix)
        return self.prefix[g] if g < k else self.suffix[(g - k) % len(self.suffix)]

    def step_cost(self, g: int) -> float:
        """Nominal cost of the transition from global index g to g + 1."""
        k = len(self.prefix)
        return self.prefix_costs[g] if g < k else self.suffix_costs[(g - k) % len(self.suffix)]

    def is_satisfaction_index(self, g: int) -> bool:
        k = len(self.prefix)
        return g >= k and (g - k) % len(self.suffix) == 0

    def label_lasso(self) -> tuple[list[frozenset[str]], list[frozenset[str]]]:
        # the automaton reads labels of states entered, so the initial
        # state's label is not part of the word
        return [s.label for s in self.prefix[1:]], [s.label for s in self.suffix]

    def to_dict(self) -> dict:
        def enc(states):
            return [
                {"region": s.region, "action": s.action, "cell": list(s.cell), "label": sorted(s.label)}
                for s in states
            ]

        return {
            "agent": self.agent,
            "prefix": enc(self.prefix),
            "suffix": enc(self.suffix),
            "prefix_costs": list(self.prefix_costs),
            "suffix_costs": list(self.suffix_costs),
            "makespan": self.makespan,
            "accepting_indices": sorted(self.accepting),
        }


def synthesize_plan(p: Product) -> PrefixSuffixPlan:
    """Minimal-makespan accepting lasso by nested Dijkstra.

    For each reachable accepting state f (ascending id) the prefix cost is the
    distance from the initial set to f and the loop cost the shortest
    nonempty cycle through f; ties prefer the cheaper prefix, then lower id.
    """
    agent = p.ts.agent
    if not p.initial:
        raise ValueError(f"agent {agent}: empty product")
    reach, parent = _dijkstra(p.edges, p.initial)
    preds: list[list[tuple[int, float]]] = [[] for _ in p.states]
    for u, out in enumerate(p.edges):
        for v, c in out:
            preds[v].append((u, c))

    best = None
    for f in sorted(p.accepting):
        if f not in reach:
            continue
        dist, par = _dijkstra(p.edges, [f])
        cycle = None
        for u, c in sorted(preds[f]):
            if u in dist:
                total = dist[u] + c
                if cycle is None or total < cycle[0]:
                    cycle = (total, u, par)
        if cycle is None:
            continue
        key = (cycle[0], reach[f], f)
        if best is None or key < best[0]:
            best = (key, cycle)
    if best is None:
        raise InfeasibleTaskError(agent, "no reachable accepting cycle")

    (xi, _, f), (_, last, par) = best
    pre = _walk(parent, f)[:-1]
    loop = _walk(par, last)

    def cost(u: int, v: int) -> float:
        return min(c for w, c in p.edges[u] if w == v)

    prefix_ids, suffix_ids = pre, loop
    pc = tuple(cost(a, b) for a, b in zip(prefix_ids, prefix_ids[1:] + [f]))
    sc = tuple(cost(a, b) for a, b in zip(suffix_ids, suffix_ids[1:] + [f]))
    ids = prefix_ids + suffix_ids
    ts = p.ts.states
    return PrefixSuffixPlan(
        agent=agent,
        prefix=tuple(ts[p.states[k][0]] for k in prefix_ids),
        suffix=tuple(ts[p.states[k][0]] for k in suffix_ids),
        prefix_costs=pc,
        suffix_costs=sc,
        makespan=xi,
        nba_states=tuple(p.states[k][1] for k in ids),
        accepting=frozenset(
            j for j, k in enumerate(ids) if j >= len(prefix_ids) and p.states[k][1] in p.nba.accepting
        ),
    )


def plan_for(spec: AgentSpec, w: Workspace, travel: TravelModel | None = None) -> PrefixSuffixPlan:
    ts = build_transition_system(spec, w, travel)
    return synthesize_plan(build_product(ts, translate_to_nba(spec.formula())))


def plan_satisfies(plan: PrefixSuffixPlan, task: AgentSpec | Formula | NBA) -> bool:
    """Check the plan's label lasso against the task automaton."""
    if isinstance(task, AgentSpec):
        task = task.formula()
    nba = task if isinstance(task, NBA) else translate_to_nba(task)
    u, v = plan.label_lasso()
    return nba_accepts_lasso(nba, u, v)


def lasso_makespan(costs: Sequence[float]) -> float:
    """Loop cost summed with the closing step first, then the others in order."""
    if not costs:
        return math.inf
    return sum(costs[:-1], costs[-1])
