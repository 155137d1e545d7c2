"""8-connected A* over per-cell traversal costs."""

from __future__ import annotations

import heapq
import math
from typing import Callable

import numpy as np

Cell = tuple[int, int]
SQRT2 = math.sqrt(2.0)
_MOVES = [(di, dj) for dj in (-1, 0, 1) for di in (-1, 0, 1) if (di, dj) != (0, 0)]


class NoPath(RuntimeError):
    pass


def astar(
    cost: np.ndarray,
    blocked: np.ndarray,
    start: Cell,
    goal: Cell,
) -> list[Cell]:
    """Cheapest 8-connected path from ``start`` to ``goal``.

    Entering a cell costs its ``cost`` value times the step length (1 or
    sqrt 2). Diagonal moves may not squeeze between two blocked cells or clip
    a blocked corner. The start cell may itself be blocked; the goal may not.
    Equal-priority entries pop in row-major order, so results are deterministic.
    """
    h, w = blocked.shape
    si, sj = start
    gi, gj = goal
    if not (0 <= gi < w and 0 <= gj < h) or blocked[gj, gi]:
        raise NoPath(f"goal {goal} is blocked or off the grid")
    if not (0 <= si < w and 0 <= sj < h):
        raise NoPath(f"start {start} is off the grid")
    floor = float(cost[~blocked].min()) if (~blocked).any() else 1.0

    def heuristic(i: int, j: int) -> float:
        dx, dy = abs(i - gi), abs(j - gj)
        return floor * (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))

    g = np.full((h, w), np.inf)
    parent = np.full((h, w), -1, dtype=np.int64)
    closed = np.zeros((h, w), dtype=bool)
    g[sj, si] = 0.0
    frontier = [(heuristic(si, sj), sj * w + si)]
    while frontier:
        _, n = heapq.heappop(frontier)
        j, i = divmod(n, w)
        if closed[j, i]:
            continue
        closed[j, i] = True
        if (i, j) == goal:
            break
        for di, dj in _MOVES:
            ni, nj = i + di, j + dj
            if not (0 <= ni < w and 0 <= nj < h) or blocked[nj, ni] or closed[nj, ni]:
                continue
            if di and dj and (blocked[j, ni] or blocked[nj, i]):
                continue
            step = SQRT2 if di and dj else 1.0
            cand = g[j, i] + step * cost[nj, ni]
            if cand < g[nj, ni]:
                g[nj, ni] = cand
                parent[nj, ni] = n
                heapq.heappush(frontier, (cand + heuristic(ni, nj), nj * w + ni))
    if not closed[gj, gi]:
        raise NoPath(f"no path from {start} to {goal}")
    path = [goal]
    n = gj * w + gi
    while parent.flat[n] >= 0:
        n = int(parent.flat[n])
        path.append((n % w, n // w))
    path.reverse()
    return path


def path_length(path: list[Cell], cell_size: float = 1.0) -> float:
    return cell_size * sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(path, path[1:]))


def lookahead_point(
    path: list[Cell],
    position: tuple[float, float],
    centers: Callable[[Cell], tuple[float, float]],
    distance: float,
    clear: Callable[[tuple[float, float], tuple[float, float]], bool] | None = None,
) -> tuple[float, float]:
    """Pure-pursuit target on ``path`` as seen from ``position``.

    Starting at the path cell nearest ``position``, walks forward and returns
    the first point at least ``distance`` away, or the last point before it
    when ``clear(position, point)`` reports an obstructed straight run.
    Falls back to the cell after the nearest one, then to the final cell.
    """
    pts = [centers(c) for c in path]
    px, py = position
    nearest = min(range(len(pts)), key=lambda k: (pts[k][0] - px) ** 2 + (pts[k][1] - py) ** 2)
    best = pts[min(nearest + 1, len(pts) - 1)]
    for k in range(nearest, len(pts)):
        if clear is not None and not clear(position, pts[k]):
            break
        best = pts[k]
        if math.hypot(pts[k][0] - px, pts[k][1] - py) >= distance:
            break
    return best


class Route:
    """A planned polyline through cell centres with distance-to-go queries.

    ``distance(p) = min_k (off_route * |p - p_k| + arc_k)`` where ``arc_k`` is
    the route length left from point k. With ``off_route`` > 1 this is
    continuous, equals the remaining arc length on the route itself, and grows
    with lateral departure; with 1 it would collapse to straight-line distance.
    """

    def __init__(self, points, off_route: float = 2.0):
        self.off_route = off_route
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.points) == 0:
            raise ValueError("a route needs at least one point")
        seg = np.hypot(*np.diff(self.points, axis=0).T) if len(self.points) > 1 else np.zeros(0)
        # arc length from each point to the end
        self.to_go = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])

    @classmethod
    def from_cells(
        cls, path: list[Cell], centers: Callable[[Cell], tuple[float, float]], goal: tuple[float, float]
    ) -> "Route":
        """Cell centres of ``path``, ending exactly at ``goal``."""
        pts = [centers(c) for c in path]
        if not pts or tuple(pts[-1]) != tuple(goal):
            pts.append(tuple(goal))
        return cls(pts)

    def distance(self, p: tuple[float, float]) -> float:
        d = np.hypot(self.points[:, 0] - p[0], self.points[:, 1] - p[1])
        return float(np.min(self.off_route * d + self.to_go))
