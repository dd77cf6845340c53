"""Grid workspace, shortest paths and turn-and-forward travel times.

Cells are ``(row, col)`` pairs; the center of a cell lies at
``x = (col + 0.5) * cell_size``, ``y = (row + 0.5) * cell_size``.  Headings
are radians measured from the +x axis, so moving to a larger column is
heading 0 and moving to a larger row is heading pi/2.
"""

from __future__ import annotations

import heapq
import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

Cell = tuple[int, int]

# (drow, dcol) for east, north, west, south; index k has heading k * pi/2
_STEPS = ((0, 1), (1, 0), (0, -1), (-1, 0))
HALF_PI = math.pi / 2
EPS = 1e-9


class UnreachableError(ValueError):
    pass


def direction_heading(k: int) -> float:
    return (0.0, HALF_PI, math.pi, -HALF_PI)[k]


def turn_angle(a: float, b: float) -> float:
    """Magnitude of the minimal signed rotation from heading ``a`` to ``b``."""
    d = math.remainder(b - a, 2 * math.pi)
    q = d / HALF_PI
    k = round(q)
    if abs(q - k) < 1e-9:
        # keep right angles exact so grid turn costs stay representable
        return abs(k) * HALF_PI
    return abs(d)


@dataclass(frozen=True)
class MotionParams:
    v: float = 1.0
    omega: float = 1.5

    def __post_init__(self):
        if not (self.v > 0 and self.omega > 0):
            raise ValueError("linear and angular speed must be positive")


@dataclass(frozen=True)
class Region:
    name: str
    cell: Cell
    heading: float = 0.0  # docking heading held while at the region


@dataclass(frozen=True)
class Path:
    cells: tuple[Cell, ...]
    length: float

    @property
    def directions(self) -> list[int]:
        out = []
        for (r0, c0), (r1, c1) in zip(self.cells, self.cells[1:]):
            out.append(_STEPS.index((r1 - r0, c1 - c0)))
        return out


@dataclass(frozen=True, eq=False)
class Workspace:
    rows: int
    cols: int
    cell_size: float = 0.5
    obstacles: frozenset[Cell] = frozenset()
    regions: Mapping[str, Region] = field(default_factory=dict)
    _trees: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.cell_size <= 0:
            raise ValueError("workspace dimensions must be positive")
        for cell in self.obstacles:
            if not self.in_bounds(cell):
                raise ValueError(f"obstacle {cell} outside the grid")
        for reg in self.regions.values():
            if not self.is_free(reg.cell):
                raise ValueError(f"region {reg.name} at {reg.cell} is not a free cell")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.obstacles

    @property
    def free_cells(self) -> tuple[Cell, ...]:
        return _free_cells(self)

    def center(self, cell: Cell) -> tuple[float, float]:
        return ((cell[1] + 0.5) * self.cell_size, (cell[0] + 0.5) * self.cell_size)

    def distance(self, a: Cell, b: Cell) -> float:
        return math.hypot(a[0] - b[0], a[1] - b[1]) * self.cell_size

    def neighbors(self, cell: Cell) -> list[tuple[Cell, int]]:
        """Free 4-neighbors in lexicographic (row, col) order, with direction."""
        out = []
        for k, (dr, dc) in enumerate(_STEPS):
            nb = (cell[0] + dr, cell[1] + dc)
            if self.is_free(nb):
                out.append((nb, k))
        out.sort()
        return out

    def check_connected(self, cells: Iterable[Cell]) -> None:
        """Raise UnreachableError unless all ``cells`` share one free component."""
        cells = list(cells)
        if not cells:
            return
        tree = self._tree(cells[0])
        for c in cells[1:]:
            if c not in tree[0]:
                raise UnreachableError(f"cell {c} is not reachable from {cells[0]}")

    def _tree(self, src: Cell):
        tree = self._trees.get(src)
        if tree is None:
            if not self.is_free(src):
                raise UnreachableError(f"cell {src} is not free")
            tree = _search(self, src)
            with self._lock:
                self._trees[src] = tree
        return tree


@lru_cache(maxsize=64)
def _free_cells(w: Workspace) -> tuple[Cell, ...]:
    return tuple((r, c) for r in range(w.rows) for c in range(w.cols) if (r, c) not in w.obstacles)


def _search(w: Workspace, src: Cell):
    # Dijkstra over (cell, incoming direction) minimizing (steps, quarter
    # turns), packed into one int; turns never exceed 2 * steps < _TURN_BASE
    nbrs = _neighbor_table(w)
    best: dict[tuple[Cell, int], int] = {(src, -1): 0}
    parent: dict[tuple[Cell, int], tuple[Cell, int]] = {}
    heap = [(0, src, -1)]
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        cost, cell, d = pop(heap)
        if best[(cell, d)] != cost:
            continue
        base = cost + _TURN_BASE
        for nb, k in nbrs[cell]:
            c = base if d < 0 else base + _QUARTERS[d][k]
            key = (nb, k)
            old = best.get(key)
            if old is None or c < old:
                best[key] = c
                parent[key] = (cell, d)
                push(heap, (c, nb, k))
    ends: dict[Cell, tuple[Cell, int]] = {}
    for (cell, d), cost in best.items():
        cur = ends.get(cell)
        if cur is None or (cost, d) < (best[cur], cur[1]):
            ends[cell] = (cell, d)
    return ends, parent


_TURN_BASE = 1 << 20
_QUARTERS = [[min((k - d) % 4, (d - k) % 4) for k in range(4)] for d in range(4)]


@lru_cache(maxsize=64)
def _neighbor_table(w: Workspace) -> dict[Cell, list[tuple[Cell, int]]]:
    return {c: w.neighbors(c) for c in w.free_cells}


def shortest_path(w: Workspace, start: Cell, goal: Cell) -> Path:
    """Minimum-length 4-connected path; ties prefer fewer turns, then
    lexicographic neighbor order."""
    if not w.is_free(start) or not w.is_free(goal):
        raise UnreachableError(f"path endpoints {start}, {goal} must be free cells")
    ends, parent = w._tree(start)
    if goal not in ends:
        raise UnreachableError(f"{goal} is unreachable from {start}")
    node = ends[goal]
    cells = [node[0]]
    while node in parent:
        node = parent[node]
        cells.append(node[0])
    cells.reverse()
    return Path(tuple(cells), (len(cells) - 1) * w.cell_size)


def final_heading(p: Path, initial_heading: float) -> float:
    dirs = p.directions
    return direction_heading(dirs[-1]) if dirs else initial_heading


def travel_time(p: Path, m: MotionParams, initial_heading: float) -> float:
    """Turn-and-forward time: every segment costs |turn|/omega + length/v."""
    t = 0.0
    heading = initial_heading
    seg = p.length / (len(p.cells) - 1) if len(p.cells) > 1 else 0.0
    for k in p.directions:
        h = direction_heading(k)
        t += turn_angle(heading, h) / m.omega
        t += seg / m.v
        heading = h
    return t


def proximity_adjacency(points: Sequence[tuple[float, float]], comm_range: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    adj = d <= comm_range + EPS
    np.fill_diagonal(adj, False)
    return adj


def is_connected(adj: np.ndarray) -> bool:
    n = len(adj)
    if n <= 1:
        return True
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            j = int(j)
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


class TravelModel:
    """Cached leg times for one agent's motion parameters.

    A leg moves from a cell with a given heading to a target cell along
    ``shortest_path``; when ``dock`` is given the agent finally rotates to
    that heading (regions have fixed docking headings).  Planning, the game
    and the executor all time legs through this class so that planned and
    realized timestamps agree bit for bit.
    """

    def __init__(self, w: Workspace, motion: MotionParams):
        self.w = w
        self.motion = motion
        self._legs: dict = {}
        self._from_tables: dict = {}
        self._to_tables: dict = {}
        self.index = {c: k for k, c in enumerate(w.free_cells)}

    def path(self, a: Cell, b: Cell) -> Path:
        return shortest_path(self.w, a, b)

    def leg(self, a: Cell, heading: float, b: Cell, dock: float | None = None) -> tuple[float, float]:
        """Return ``(duration, heading on arrival)``."""
        key = (a, heading, b, dock)
        hit = self._legs.get(key)
        if hit is None:
            p = self.path(a, b)
            t = travel_time(p, self.motion, heading)
            h = final_heading(p, heading)
            if dock is not None:
                t += turn_angle(h, dock) / self.motion.omega
                h = dock
            hit = (t, h)
            self._legs[key] = hit
        return hit

    def from_table(self, a: Cell, heading: float) -> tuple[np.ndarray, list[float]]:
        """Undocked leg times from ``a`` to every free cell and arrival headings."""
        key = (a, heading)
        hit = self._from_tables.get(key)
        if hit is None:
            legs = [self.leg(a, heading, z) for z in self.w.free_cells]
            hit = (np.array([t for t, _ in legs]), [h for _, h in legs])
            self._from_tables[key] = hit
        return hit

    def to_table(self, b: Cell, dock: float) -> np.ndarray:
        """``[z, k]`` docked leg time from free cell z with heading k*pi/2 to ``b``."""
        key = (b, dock)
        hit = self._to_tables.get(key)
        if hit is None:
            hit = np.array(
                [[self.leg(z, direction_heading(k), b, dock)[0] for k in range(4)] for z in self.w.free_cells]
            )
            self._to_tables[key] = hit
        return hit
