"""Scenario files: JSON describing the map, the agents and the run parameters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .consensus import SignalModel
from .ltl import LTLSyntaxError, parse_ltl
from .planner import AgentSpec, recurrent_cosafe_body
from .workspace import MotionParams, Region, Workspace

BASELINES = ("nash", "static", "pairwise", "alltime")


class ScenarioError(ValueError):
    """Invalid scenario; ``where`` locates the problem in the file."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class Params:
    R: float = 1.0
    Tc: float = 60.0
    Dc: float = 5.0
    v: float = 1.0
    omega: float = 1.5
    K: int = 500
    rounds: int = 100
    seed: int = 0


@dataclass(frozen=True)
class Scenario:
    name: str
    workspace: Workspace
    agents: tuple[AgentSpec, ...]
    params: Params
    baseline: str = "nash"
    pairing: tuple[tuple[int, int], ...] = ()
    signal: SignalModel | None = None
    monitor_action: str = "monitor"
    estimate_mode: str = "fused"
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def motion(self) -> MotionParams:
        return MotionParams(self.params.v, self.params.omega)

    def agent(self, i: int) -> AgentSpec:
        for a in self.agents:
            if a.id == i:
                return a
        raise KeyError(i)

    def chain_pairs(self) -> tuple[tuple[int, int], ...]:
        if self.pairing:
            return self.pairing
        ids = [a.id for a in self.agents]
        return tuple(zip(ids, ids[1:]))

    def with_baseline(self, kind: str) -> "Scenario":
        from dataclasses import replace

        if kind not in BASELINES:
            raise ScenarioError("baseline", f"unknown kind {kind!r}")
        return replace(self, baseline=kind)


def _expand_obstacles(items, where) -> set:
    cells = set()
    for k, item in enumerate(items):
        if len(item) == 2:
            cells.add((int(item[0]), int(item[1])))
        elif len(item) == 4:
            r0, c0, r1, c1 = map(int, item)
            cells.update((r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1))
        else:
            raise ScenarioError(f"{where}[{k}]", "expected [row, col] or [row0, col0, row1, col1]")
    return cells


def _req(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ScenarioError(where, f"missing key {key!r}")
    return d[key]


def scenario_from_dict(doc: dict) -> Scenario:
    ws = _req(doc, "workspace", "$")
    regions = {}
    for name, spec in _req(ws, "regions", "workspace").items():
        where = f"workspace.regions.{name}"
        cell = tuple(_req(spec, "cell", where))
        regions[name] = Region(name, (int(cell[0]), int(cell[1])), math.radians(spec.get("heading_deg", 0.0)))
    obstacles = frozenset(_expand_obstacles(ws.get("obstacles", []), "workspace.obstacles"))
    try:
        w = Workspace(int(_req(ws, "rows", "workspace")), int(_req(ws, "cols", "workspace")),
                      float(ws.get("cell_size", 0.5)), obstacles, regions)
    except ValueError as e:
        raise ScenarioError("workspace", str(e)) from None

    p = doc.get("params", {})
    unknown = set(p) - set(Params.__dataclass_fields__)
    if unknown:
        raise ScenarioError("params", f"unknown keys {sorted(unknown)}")
    params = Params(**p)
    if not (params.Tc > params.Dc > 0):
        raise ScenarioError("params", "need Tc > Dc > 0")
    if params.R <= 0 or params.rounds < 0 or params.K < 0:
        raise ScenarioError("params", "R must be positive, rounds and K non-negative")
    try:
        motion = MotionParams(params.v, params.omega)
    except ValueError as e:
        raise ScenarioError("params", str(e)) from None

    agents = []
    for k, a in enumerate(_req(doc, "agents", "$")):
        where = f"agents[{k}]"
        names = _req(a, "regions", where)
        for n in names:
            if n not in regions:
                raise ScenarioError(f"{where}.regions", f"unknown region {n!r}")
        start = tuple(_req(a, "start", where))
        try:
            spec = AgentSpec(
                id=int(_req(a, "id", where)),
                start=(int(start[0]), int(start[1])),
                heading=math.radians(a.get("heading_deg", 0.0)),
                regions=tuple(regions[n] for n in names),
                actions={str(x): float(d) for x, d in _req(a, "actions", where).items()},
                task=str(_req(a, "task", where)),
                motion=motion,
            )
        except ValueError as e:
            raise ScenarioError(where, str(e)) from None
        if not w.is_free(spec.start):
            raise ScenarioError(f"{where}.start", f"{spec.start} is not a free cell")
        try:
            f = parse_ltl(spec.task, spec.alphabet)
        except LTLSyntaxError as e:
            raise ScenarioError(f"{where}.task", f"offset {e.offset}: {e.message}") from None
        if recurrent_cosafe_body(f) is None:
            raise ScenarioError(f"{where}.task", "task must have the form []<>(co-safe formula)")
        agents.append(spec)
    ids = [a.id for a in agents]
    if not agents or len(set(ids)) != len(ids):
        raise ScenarioError("agents", "need at least one agent with unique ids")
    w.check_connected([a.start for a in agents] + [r.cell for a in agents for r in a.regions])

    baseline = doc.get("baseline", "nash")
    if baseline not in BASELINES:
        raise ScenarioError("baseline", f"unknown kind {baseline!r}")
    pairing = tuple((int(a), int(b)) for a, b in doc.get("pairing", []))
    for a, b in pairing:
        if a not in ids or b not in ids or a == b:
            raise ScenarioError("pairing", f"bad pair ({a}, {b})")

    signal = None
    monitor, mode = "monitor", "fused"
    if "signal" in doc:
        s = doc["signal"]
        knots = tuple((float(t), float(v)) for t, v in _req(s, "knots", "signal"))
        try:
            signal = SignalModel(
                knots,
                magnitude=float(s.get("magnitude", 1.0)),
                omega=float(s.get("omega", math.pi / 6000)),
                phases=SignalModel.uniform_phases(len(agents)) if s.get("phases", "uniform") == "uniform"
                else SignalModel.random_phases(len(agents), params.seed),
            )
        except ValueError as e:
            raise ScenarioError("signal", str(e)) from None
        monitor = s.get("monitor_action", "monitor")
        mode = s.get("mode", "fused")
        if mode not in ("fused", "raw"):
            raise ScenarioError("signal.mode", f"unknown mode {mode!r}")
    return Scenario(str(doc.get("name", "scenario")), w, tuple(agents), params, baseline, pairing,
                    signal, monitor, mode, source=doc)


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"line {e.lineno} column {e.colno}", e.msg) from None
    return scenario_from_dict(doc)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``plant`` or ``solo``)."""
    return Path(str(resources.files("teamcomm") / "scenarios" / f"{name}.json"))


def scenario_to_dict(sc: Scenario) -> dict:
    w = sc.workspace
    regions = {}
    for a in sc.agents:
        for r in a.regions:
            regions[r.name] = {"cell": list(r.cell), "heading_deg": math.degrees(r.heading)}
    for r in w.regions.values():
        regions.setdefault(r.name, {"cell": list(r.cell), "heading_deg": math.degrees(r.heading)})
    doc = {
        "name": sc.name,
        "workspace": {
            "rows": w.rows,
            "cols": w.cols,
            "cell_size": w.cell_size,
            "obstacles": [list(c) for c in sorted(w.obstacles)],
            "regions": dict(sorted(regions.items())),
        },
        "agents": [
            {
                "id": a.id,
                "start": list(a.start),
                "heading_deg": math.degrees(a.heading),
                "regions": [r.name for r in a.regions],
                "actions": dict(a.actions),
                "task": a.task,
            }
            for a in sc.agents
        ],
        "params": dict(vars(sc.params)),
        "baseline": sc.baseline,
        "pairing": [list(p) for p in sc.pairing],
    }
    if sc.signal is not None:
        doc["signal"] = {
            "knots": [list(k) for k in sc.signal.knots],
            "magnitude": sc.signal.magnitude,
            "omega": sc.signal.omega,
            "phases": "uniform",
            "monitor_action": sc.monitor_action,
            "mode": sc.estimate_mode,
        }
        if sc.signal.phases != SignalModel.uniform_phases(len(sc.agents)):
            doc["signal"]["phases"] = "random"
    return doc
