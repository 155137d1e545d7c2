"""Discretised state features for the tabular Q-function.

The full map state (cover, threat, height, goal maps plus robot and goal
positions) is compressed into five small integers read off a window around
the robot.  The bearing feature points at a local waypoint (the next point of
the current plan) so a tabular policy can still act on map-wide structure.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from ..maps import MapStack, project_point

COVER_EDGES = (0.1, 0.3, 0.5, 0.75)
THREAT_EDGES = (0.02, 0.1, 0.3, 0.6)
DIST_EDGES = (1.0, 2.0, 4.0, 7.0, 11.0, 16.0, 23.0)  # metres, roughly log-spaced
N_COVER = len(COVER_EDGES) + 1
N_THREAT = len(THREAT_EDGES) + 1
N_DIST = len(DIST_EDGES) + 1
N_BEARING = 8
RADICES = (N_COVER, N_THREAT, 2, N_DIST, N_BEARING)
N_STATES = math.prod(RADICES)


@dataclass(frozen=True, order=True)
class StateFeatures:
    cover_bucket: int
    threat_bucket: int
    height_block: bool
    goal_dist_bucket: int
    goal_bearing_bucket: int

    def __post_init__(self):
        for value, n, name in zip(self.as_tuple(), RADICES, ("cover", "threat", "height", "dist", "bearing")):
            if not 0 <= value < n:
                raise ValueError(f"{name} bucket {value} outside [0, {n})")

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (
            self.cover_bucket,
            self.threat_bucket,
            int(self.height_block),
            self.goal_dist_bucket,
            self.goal_bearing_bucket,
        )

    @property
    def index(self) -> int:
        idx = 0
        for value, n in zip(self.as_tuple(), RADICES):
            idx = idx * n + value
        return idx

    @classmethod
    def from_index(cls, idx: int) -> "StateFeatures":
        if not 0 <= idx < N_STATES:
            raise IndexError(f"state index {idx} out of range")
        vals = []
        for n in reversed(RADICES):
            vals.append(idx % n)
            idx //= n
        c, t, h, d, b = reversed(vals)
        return cls(c, t, bool(h), d, b)

    @property
    def key(self) -> str:
        return ",".join(str(v) for v in self.as_tuple())

    @classmethod
    def from_key(cls, key: str) -> "StateFeatures":
        c, t, h, d, b = (int(v) for v in key.split(","))
        return cls(c, t, bool(h), d, b)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def bearing_bucket(relative: float) -> int:
    """Eight 45-degree sectors, sector 0 centred straight ahead, counter-clockwise."""
    rel = wrap_angle(relative)
    return int(math.floor((rel + math.pi / 8) / (math.pi / 4))) % N_BEARING


def _window(values: np.ndarray, cell: tuple[int, int], radius: int) -> np.ndarray:
    i, j = cell
    h, w = values.shape
    return values[max(0, j - radius) : min(h, j + radius + 1), max(0, i - radius) : min(w, i + radius + 1)]


def extract_features(
    stack: MapStack,
    pose: tuple[float, float, float],
    goal: tuple[float, float],
    waypoint: tuple[float, float],
    h_max: float = 0.3,
    window: int = 1,
) -> StateFeatures:
    x, y, heading = pose
    spec = stack.spec
    cell = project_point(spec, (x, y))
    if cell is None:
        raise ValueError(f"robot position {(x, y)} is off the grid")

    cover = float(_window(stack.cover_area.values, cell, window).mean())
    peak = float(stack.threat.values.max())
    threat = float(_window(stack.threat.values, cell, window).mean()) / peak if peak > 0 else 0.0
    blocked = bool((_window(stack.height.values, cell, window) > h_max).any())
    dist = math.hypot(goal[0] - x, goal[1] - y)
    rel = math.atan2(waypoint[1] - y, waypoint[0] - x) - heading
    return StateFeatures(
        bisect.bisect_right(COVER_EDGES, cover),
        bisect.bisect_right(THREAT_EDGES, threat),
        blocked,
        bisect.bisect_right(DIST_EDGES, dist),
        bearing_bucket(rel),
    )
