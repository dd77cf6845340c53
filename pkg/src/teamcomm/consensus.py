"""Drifting measurement signal, average consensus and deviation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .workspace import is_connected

STEP_RATE = 10  # consensus iterations per second of communication
CONSENSUS_PERIOD = 1.0  # session spacing when the team is always connected


@dataclass(frozen=True)
class SignalModel:
    """Piecewise-linear truth plus a slow per-agent sinusoid."""

    knots: tuple[tuple[float, float], ...]
    magnitude: float = 1.0
    omega: float = math.pi / 6000
    phases: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.knots:
            raise ValueError("signal needs at least one knot")
        ts = [t for t, _ in self.knots]
        if ts != sorted(ts):
            raise ValueError("signal knots must be sorted by time")

    @staticmethod
    def uniform_phases(n: int) -> tuple[float, ...]:
        return tuple(2 * math.pi * i / n for i in range(n))

    @staticmethod
    def random_phases(n: int, seed: int) -> tuple[float, ...]:
        rng = np.random.default_rng(seed)
        return tuple(float(x) for x in rng.uniform(0, 2 * math.pi, n))

    def truth(self, t):
        ts, vs = zip(*self.knots)
        return np.interp(t, ts, vs)

    def phase(self, k: int) -> float:
        return self.phases[k] if self.phases else 0.0


def measure(k: int, t: float, sm: SignalModel) -> float:
    """Reading of the agent at position ``k`` of the team at time ``t``."""
    return float(sm.truth(t)) + sm.magnitude * math.sin(sm.omega * t + sm.phase(k))


def max_degree(adj: np.ndarray) -> int:
    return int(adj.sum(axis=1).max()) if len(adj) else 0


def consensus_round(
    x: Sequence[float], adj: np.ndarray, steps: int, epsilon: float | None = None
) -> tuple[np.ndarray, bool]:
    """Synchronous averaging ``x_i += eps * sum_j (x_j - x_i)``.

    Returns the new values and whether the topology was connected (on a
    disconnected graph each component averages on its own).
    """
    x = np.asarray(x, dtype=float).copy()
    adj = np.asarray(adj, dtype=bool)
    dmax = max_degree(adj)
    if epsilon is None:
        epsilon = 0.4 / dmax if dmax else 0.0
    if dmax and not 0 < epsilon < 1 / dmax:
        raise ValueError(f"gain {epsilon} outside (0, 1/{dmax})")
    L = np.diag(adj.sum(axis=1)) - adj.astype(float)
    for _ in range(steps):
        x = x - epsilon * (L @ x)
    return x, is_connected(adj)


def spread(x: Sequence[float]) -> float:
    return float(np.max(x) - np.min(x)) if len(x) else 0.0


def deviation_metrics(times: Sequence[float], estimates: np.ndarray, sm: SignalModel) -> list[tuple[float, float]]:
    """Per-agent ``(max |x - truth|, rms)`` over sampled estimates ``[t, agent]``."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if len(times) == 0:
        raise ValueError("empty estimate trace")
    err = est - sm.truth(np.asarray(times, dtype=float))[:, None]
    return [(float(np.abs(e).max()), float(np.sqrt(np.mean(e**2)))) for e in err.T]


class EstimateTracker:
    """Per-agent estimates as step functions of time.

    In ``fused`` mode a reading only refreshes the agent's next consensus
    input and the estimate changes at consensus; in ``raw`` mode the reading
    also replaces the estimate immediately.
    """

    def __init__(self, n: int, sm: SignalModel, mode: str = "fused"):
        if mode not in ("fused", "raw"):
            raise ValueError(f"unknown estimate mode {mode!r}")
        self.sm, self.mode = sm, mode
        self.x = np.array([measure(k, 0.0, sm) for k in range(n)])
        self.pending = self.x.copy()
        self.last = np.zeros(n)
        self.history: list[tuple[float, int, float]] = [(0.0, k, float(v)) for k, v in enumerate(self.x)]
        self.windows: list[dict] = []

    def reading(self, k: int, t: float) -> None:
        v = measure(k, t, self.sm)
        self.pending[k] = v
        self.last[k] = t
        if self.mode == "raw":
            self.x[k] = v
            self.history.append((t, k, v))

    def fuse(self, members: Sequence[int], adj: np.ndarray, t: float, steps: int) -> dict:
        members = list(members)
        before = self.pending[members] if self.mode == "fused" else self.x[members]
        after, connected = consensus_round(before, adj, steps)
        rec = {
            "t": t,
            "agents": members,
            "mean_before": float(np.mean(before)),
            "mean_after": float(np.mean(after)),
            "spread_before": spread(before),
            "spread_after": spread(after),
            "connected": connected,
        }
        self.windows.append(rec)
        for k, v in zip(members, after):
            self.x[k] = v
            self.pending[k] = v
            self.history.append((t, k, float(v)))
        return rec

    def sample(self, times: Sequence[float]) -> np.ndarray:
        """Estimates ``[t, agent]``; an update at time t is visible at t."""
        times = np.asarray(times, dtype=float)
        n = len(self.x)
        out = np.empty((len(times), n))
        for k in range(n):
            hist = [(t, v) for t, kk, v in self.history if kk == k]
            ts = np.array([t for t, _ in hist])
            vs = np.array([v for _, v in hist])
            idx = np.searchsorted(ts, times, side="right") - 1
            out[:, k] = vs[np.maximum(idx, 0)]
        return out
