"""The four reward terms: cover utilisation, threat exposure, goal progress, collision."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

from ..maps import GridMap, MapStack, project_point, swept_cells

Cell = tuple[int, int]


@dataclass(frozen=True)
class RewardWeights:
    cover: float = 1.0
    threat: float = 2.0
    goal: float = 5.0
    collision: float = 10.0


@dataclass(frozen=True)
class RewardTerms:
    cover: float = 0.0
    threat: float = 0.0
    goal: float = 0.0
    collision: float = 0.0

    @property
    def total(self) -> float:
        return total_reward(self)


def _check(grid: GridMap, cells: Iterable[Cell]) -> list[Cell]:
    cells = list(cells)
    for c in cells:
        if not grid.spec.contains(c):
            raise IndexError(f"cell {c} is off the grid")
    return cells


def reward_cover(cover: GridMap, traversed: Iterable[Cell], weight: float = 1.0) -> float:
    """``weight`` times the summed cover density of the traversed cells."""
    return weight * sum(cover[c] for c in _check(cover, traversed))


def reward_threat(threat: GridMap, occupied: Iterable[Cell], weight: float = 2.0) -> float:
    return -weight * sum(threat[c] for c in _check(threat, occupied))


def reward_goal(d_prev: float, d_next: float, weight: float = 5.0) -> float:
    return weight * (d_prev - d_next)


def reward_collision(
    height: GridMap, traversed: Iterable[Cell], h_max: float = 0.3, weight: float = 10.0
) -> float:
    if any(height[c] > h_max for c in _check(height, traversed)):
        return -weight
    return 0.0


def total_reward(terms: RewardTerms) -> float:
    return terms.cover + terms.threat + terms.goal + terms.collision


def score_step(
    stack: MapStack,
    pose: tuple[float, float],
    next_pose: tuple[float, float],
    goal: tuple[float, float],
    weights: RewardWeights = RewardWeights(),
    h_max: float = 0.3,
    distance: Callable[[tuple[float, float]], float] | None = None,
) -> RewardTerms:
    """Reward terms for moving from ``pose`` to ``next_pose`` (x, y only).

    The swept cells are the supercover of the straight segment; the occupied
    cell is the one holding ``pose``. Both must be on the grid. A step that
    does not move traverses no cells, so waiting in cover earns nothing.
    ``distance`` measures distance-to-goal for the progress term (straight
    line by default).
    """
    spec = stack.spec
    moved = tuple(pose[:2]) != tuple(next_pose[:2])
    swept = swept_cells(spec, pose[:2], next_pose[:2]) if moved else []
    here = project_point(spec, pose[:2])
    if here is None:
        raise IndexError(f"pose {pose[:2]} is off the grid")
    if distance is None:
        d0 = math.hypot(goal[0] - pose[0], goal[1] - pose[1])
        d1 = math.hypot(goal[0] - next_pose[0], goal[1] - next_pose[1])
    else:
        d0, d1 = distance(pose[:2]), distance(next_pose[:2])
    return RewardTerms(
        cover=reward_cover(stack.cover_area, swept, weights.cover),
        threat=reward_threat(stack.threat, [here], weights.threat),
        goal=reward_goal(d0, d1, weights.goal),
        collision=reward_collision(stack.height, swept, h_max, weights.collision),
    )
