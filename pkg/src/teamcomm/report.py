"""CSV, JSON-lines and SVG outputs of simulation runs."""

from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .consensus import deviation_metrics
from .executor import ExecutionTrace, realized_makespan, task_satisfied, verify_sufficient_communication
from .scenario import Scenario
from .workspace import Workspace

METRICS_COLUMNS = [
    "round", "agents", "planned_tc", "realized_tc", "phi_initial_per_agent", "phi_per_agent",
    "mean_extra", "iterations", "window_pass", "violation", "wall_clock_s",
]
AGENT_COLUMNS = ["agent", "planned_makespan", "realized_makespan", "satisfactions", "task_satisfied"]
API_COLUMNS = ["t", "agent", "estimate", "truth", "deviation"]
COMPARISON_COLUMNS = [
    "method", "mean_extra", "mean_realized_makespan", "connected_fraction", "windows_passed",
    "windows", "max_dev", "rms_dev",
]
SAMPLE_STEP = 1.0  # estimate sampling for deviation metrics (s)


def window_results(trace: ExecutionTrace) -> list[bool]:
    return verify_sufficient_communication(trace.connectivity(), trace.Tc, trace.Dc, trace.rounds + 1)


def estimate_samples(trace: ExecutionTrace, horizon: float | None = None):
    """Sample times after the first rendezvous and the estimates there."""
    end = trace.end if horizon is None else min(trace.end, horizon)
    ts = np.arange(trace.Dc, end, SAMPLE_STEP)
    return ts, trace.tracker.sample(ts)


def write_events(trace: ExecutionTrace, path: Path) -> None:
    path.write_text(trace.events_jsonl(), encoding="utf-8")


def write_game_trace(trace: ExecutionTrace, path: Path) -> None:
    path.write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in trace.game_trace), encoding="utf-8")


def write_metrics(trace: ExecutionTrace, path: Path, windows: Sequence[bool]) -> None:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(METRICS_COLUMNS)
        for g in trace.groups:
            n = len(g.agents)
            extra = g.extra
            out.writerow([
                g.round, " ".join(map(str, g.agents)), g.planned_tc, g.realized_tc,
                g.phi_initial / n, g.phi_final / n, sum(extra.values()) / n, g.iterations,
                int(windows[g.round]) if g.round < len(windows) else "", int(g.violation),
                f"{g.wall_clock:.6f}",
            ])


def write_agents(trace: ExecutionTrace, sc: Scenario, path: Path) -> None:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(AGENT_COLUMNS)
        for a in trace.agents:
            plan = trace.plans[a]
            try:
                xi = realized_makespan(trace, a)
            except ValueError:
                xi = ""
            try:
                ok = int(task_satisfied(trace, sc.agent(a), plan))
            except ValueError:
                ok = ""
            out.writerow([a, plan.makespan, xi, len(trace.satisfactions[a]), ok])


def write_api(trace: ExecutionTrace, sc: Scenario, path: Path) -> None:
    ts, est = estimate_samples(trace)
    truth = sc.signal.truth(ts)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(API_COLUMNS)
        for k, t in enumerate(ts):
            for j, a in enumerate(trace.agents):
                out.writerow([f"{t:.1f}", a, est[k, j], truth[k], est[k, j] - truth[k]])


def rendezvous_counts(trace: ExecutionTrace) -> Counter:
    counts: Counter = Counter()
    for e in trace.comm_events():
        if e["round"] > 0:
            counts.update(tuple(c) for c in e["cells"])
    return counts


def heatmap_svg(w: Workspace, counts: Mapping, px: int = 24) -> str:
    """Grid picture with obstacles in grey and rendezvous cells shaded by visits."""
    top = max(counts.values(), default=0)
    W, H = w.cols * px, w.rows * px
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
    ]
    for r in range(w.rows):
        for c in range(w.cols):
            # row 0 at the bottom so the picture matches x/y coordinates
            x, y = c * px, (w.rows - 1 - r) * px
            n = counts.get((r, c), 0)
            if (r, c) in w.obstacles:
                fill = "#808080"
            elif n:
                level = int(round(255 * (1 - n / top)))
                fill = f"rgb(255,{level},{level})"
            else:
                fill = "white"
            parts.append(f'<rect x="{x}" y="{y}" width="{px}" height="{px}" fill="{fill}" stroke="#dddddd"/>')
            if n:
                parts.append(
                    f'<text x="{x + px / 2}" y="{y + px * 0.65}" font-size="{px * 0.4:.1f}" '
                    f'text-anchor="middle">{n}</text>'
                )
    for reg in w.regions.values():
        r, c = reg.cell
        x, y = c * px, (w.rows - 1 - r) * px
        parts.append(f'<rect x="{x + 2}" y="{y + 2}" width="{px - 4}" height="{px - 4}" fill="none" stroke="blue"/>')
        parts.append(f'<text x="{x + 2}" y="{y + px * 0.35}" font-size="{px * 0.3:.1f}" fill="blue">{reg.name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def summarize(trace: ExecutionTrace, sc: Scenario, horizon: float | None = None) -> dict:
    """One comparison row."""
    log = trace.connectivity()
    windows = verify_sufficient_communication(log, trace.Tc, trace.Dc, trace.rounds + 1)
    rounds = [g for g in trace.groups if g.round > 0]
    extras = [v for g in rounds for v in g.extra.values()]
    # agents that have not closed a loop within the horizon are left out
    spans = [realized_makespan(trace, a) for a in trace.agents if len(trace.satisfactions[a]) >= 2]
    row = {
        "method": trace.scheme,
        "mean_extra": float(np.mean(extras)) if extras else "",
        "mean_realized_makespan": float(np.mean(spans)) if spans else "",
        "connected_fraction": log.fraction,
        "windows_passed": sum(windows),
        "windows": len(windows),
        "max_dev": "",
        "rms_dev": "",
    }
    if trace.tracker is not None and sc.signal is not None:
        ts, est = estimate_samples(trace, horizon)
        dm = deviation_metrics(ts, est, sc.signal)
        row["max_dev"] = max(d[0] for d in dm)
        row["rms_dev"] = float(np.sqrt(np.mean([d[1] ** 2 for d in dm])))
    return row


def write_rows(path: Path, columns: Sequence[str], rows: Sequence[Mapping]) -> None:
    with path.open("w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=list(columns))
        out.writeheader()
        for r in rows:
            out.writerow(r)


def write_deviations(traces: Mapping[str, ExecutionTrace], sc: Scenario, horizon: float, path: Path) -> None:
    """Team-wide largest deviation over time, one column per method."""
    Dc = next(iter(traces.values())).Dc
    ts = np.arange(Dc, horizon, SAMPLE_STEP)
    truth = sc.signal.truth(ts)
    cols = {}
    for name, tr in traces.items():
        if tr.tracker is None:
            continue
        cols[name] = np.abs(tr.tracker.sample(ts) - truth[:, None]).max(axis=1)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", *cols])
        for k, t in enumerate(ts):
            out.writerow([f"{t:.1f}", *(cols[n][k] for n in cols)])
