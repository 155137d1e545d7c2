"""Unicycle integration, velocity modulation and one-step action masking."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..maps import HeightMap, swept_cells
from ..rl.actions import ACTIONS, N_ACTIONS, STOP, V_MAX, W_MAX
from ..rl.features import wrap_angle

THREAT_SLOWDOWN = 0.7
CLUTTER_SLOWDOWN = 0.5
TURN_SLOWDOWN = 0.5


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    heading: float = 0.0
    time: float = 0.0

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.heading)


def step(robot: RobotState, action: tuple[float, float], dt: float) -> RobotState:
    """Advance along the current heading, then turn."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    v, w = action
    return RobotState(
        robot.x + v * math.cos(robot.heading) * dt,
        robot.y + v * math.sin(robot.heading) * dt,
        wrap_angle(robot.heading + w * dt),
        robot.time + dt,
    )


def modulate_velocity(
    nominal: tuple[float, float], threat_level: float, obstacle_density: float
) -> tuple[float, float]:
    """Slow down under threat and in clutter; turn more gently under threat."""
    if not (0.0 <= threat_level <= 1.0 and 0.0 <= obstacle_density <= 1.0):
        raise ValueError("threat_level and obstacle_density must lie in [0, 1]")
    v, w = nominal
    v2 = v * (1.0 - THREAT_SLOWDOWN * threat_level) * (1.0 - CLUTTER_SLOWDOWN * obstacle_density)
    w2 = w * (1.0 - TURN_SLOWDOWN * threat_level)
    return (min(max(v2, 0.0), V_MAX), min(max(w2, -W_MAX), W_MAX))


def obstacle_density(height: HeightMap, cell: tuple[int, int], h_max: float) -> float:
    """Fraction of the 8 neighbours that are untraversable; off-grid counts as blocked."""
    i, j = cell
    spec = height.spec
    n = 0
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            c = (i + di, j + dj)
            if not spec.contains(c) or height[c] > h_max:
                n += 1
    return n / 8.0


def action_cells(robot: RobotState, action: tuple[float, float], spec, dt: float):
    nxt = step(robot, action, dt)
    return swept_cells(spec, robot.xy, nxt.xy)


def feasible_actions(robot: RobotState, height: HeightMap, h_max: float, dt: float) -> np.ndarray:
    """Boolean mask over the action grid; the stop action is always allowed.

    The swept segment depends only on v_x (turning happens after the move), so
    each linear speed is checked once.
    """
    spec = height.spec
    h = height.values
    by_speed: dict[float, bool] = {}
    mask = np.zeros(N_ACTIONS, dtype=bool)
    for a in range(N_ACTIONS):
        v = float(ACTIONS[a, 0])
        if v not in by_speed:
            cells = action_cells(robot, (v, 0.0), spec, dt)
            by_speed[v] = all(
                0 <= i < spec.width and 0 <= j < spec.height and h[j, i] <= h_max for i, j in cells
            )
        mask[a] = by_speed[v]
    mask[STOP] = True
    return mask
