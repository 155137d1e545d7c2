"""Scenario assembly: world, perceived maps, start/goal and threat placement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..atave import line_of_sight
from ..maps import (
    CoverMap,
    GridSpec,
    HeightMap,
    MapStack,
    ThreatMap,
    build_cover_map,
    build_goal_map,
    build_height_map,
    dilate,
    project_point,
)
from ..perception import CoverThresholds, identify_cover
from ..worldgen import PointCloud, World, generate_world, sample_point_cloud
from .agents import ThreatAgent
from .planning import NoPath, astar

Cell = tuple[int, int]


class InfeasibleScenario(RuntimeError):
    """No valid start/goal/threat configuration could be produced."""


@dataclass(frozen=True)
class PerceptionParams:
    cell_size: float = 1.0
    link_radius: float = 0.75
    min_points: int = 5
    thresholds: CoverThresholds = field(default_factory=CoverThresholds)
    cover_radius: int = 1  # dilation of the cover map into the robot-usable cover area
    noise_sigma: float = 0.02


@dataclass(frozen=True)
class PlacementParams:
    goal_range: tuple[float, float] = (10.0, 30.0)
    clearance: int = 1
    n_threats: tuple[int, int] = (1, 2)
    threat_offset: tuple[float, float] = (4.0, 10.0)  # distance from the start-goal segment
    threat_keepout: float = 6.0  # minimum distance to start and goal
    threat_watch: float = 0.3  # fraction of the straight line a threat must see
    threat_eye_height: float = 1.0
    threat_range: float = 10.0
    safe_radius: int = 2  # cells around start and goal that no threat may see
    retries: int = 200


@dataclass
class Scenario:
    name: str
    seed: int
    world: World | None
    stack: MapStack
    start: tuple[float, float]
    start_heading: float
    goal: tuple[float, float]
    threats: tuple[ThreatAgent, ...]
    suspected: tuple[Cell, ...] = ()

    @property
    def spec(self) -> GridSpec:
        return self.stack.spec


def perceive(
    cloud: PointCloud, spec: GridSpec, goal: tuple[float, float], params: PerceptionParams
) -> MapStack:
    """Cluster the cloud and build the map stack; the threat channel starts at zero."""
    _, _, cover_idx = identify_cover(cloud, params.link_radius, params.min_points, params.thresholds)
    cover = build_cover_map(cloud, sorted(cover_idx), spec)
    height = build_height_map(cloud, spec)
    area = CoverMap(spec, dilate(cover.values, params.cover_radius))
    return MapStack(
        height=height,
        cover=cover,
        cover_area=area,
        goal=build_goal_map(spec, goal),
        threat=ThreatMap(spec, np.zeros(spec.shape)),
    )


def free_mask(height: HeightMap, h_max: float, clearance: int = 0) -> np.ndarray:
    """Traversable cells whose whole (2c+1)^2 neighbourhood is traversable and on-grid."""
    blocked = (height.values > h_max).astype(float)
    if clearance > 0:
        padded = np.pad(blocked, clearance, constant_values=1.0)
        blocked = dilate(padded, clearance)[clearance:-clearance, clearance:-clearance]
    return blocked == 0


def _segment_distance(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / (dx * dx + dy * dy)
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - ax - t * dx, p[1] - ay - t * dy)


def line_cells(spec: GridSpec, a, b, samples: int = 64) -> list[Cell]:
    cells = []
    for t in np.linspace(0.0, 1.0, samples):
        c = project_point(spec, (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
        if c is not None and c not in cells:
            cells.append(c)
    return cells


def place_threats(
    stack: MapStack,
    start: tuple[float, float],
    goal: tuple[float, float],
    rng: np.random.Generator,
    params: PlacementParams,
    h_max: float,
) -> tuple[ThreatAgent, ...]:
    """Static threats off to the side of the direct route, each overlooking part of it.

    A threat never sees the cells within ``safe_radius`` of the start or
    goal, so every episode begins unobserved.
    """
    spec = stack.spec
    height = stack.height
    n = int(rng.integers(params.n_threats[0], params.n_threats[1] + 1))
    route = line_cells(spec, start, goal)
    lo, hi = params.threat_offset
    candidates = []
    for i, j in zip(*np.nonzero(free_mask(height, h_max).T)):
        p = spec.center((int(i), int(j)))
        if not lo <= _segment_distance(p, start, goal) <= hi:
            continue
        if min(math.dist(p, start), math.dist(p, goal)) < params.threat_keepout:
            continue
        candidates.append((int(i), int(j)))
    if not candidates:
        return ()
    r = params.safe_radius
    ends = [
        (c[0] + di, c[1] + dj)
        for c in (project_point(spec, start), project_point(spec, goal))
        for dj in range(-r, r + 1)
        for di in range(-r, r + 1)
        if spec.contains((c[0] + di, c[1] + dj)) and height[(c[0] + di, c[1] + dj)] <= h_max
    ]
    order = rng.permutation(len(candidates))
    threats: list[ThreatAgent] = []
    for k in order:
        cell = candidates[k]
        if any(math.dist(cell, t.position) < 6.0 for t in threats):
            continue
        if any(line_of_sight(height, cell, e, params.threat_eye_height, params.threat_range) for e in ends):
            continue
        seen = sum(
            line_of_sight(height, cell, r, params.threat_eye_height, params.threat_range) for r in route
        )
        if seen >= params.threat_watch * len(route):
            threats.append(ThreatAgent(cell, params.threat_eye_height, params.threat_range))
            if len(threats) == n:
                break
    return tuple(threats)


def sample_start_goal(
    height: HeightMap,
    rng: np.random.Generator,
    params: PlacementParams,
    h_max: float,
) -> tuple[Cell, Cell]:
    spec = height.spec
    free = free_mask(height, h_max, params.clearance)
    cells = np.argwhere(free.T)
    if len(cells) < 2:
        raise InfeasibleScenario("not enough free cells for a start and a goal")
    lo, hi = params.goal_range
    blocked = height.values > h_max
    for _ in range(params.retries):
        s = tuple(int(v) for v in cells[rng.integers(len(cells))])
        g = tuple(int(v) for v in cells[rng.integers(len(cells))])
        if not lo <= math.dist(s, g) * spec.cell_size <= hi:
            continue
        try:
            astar(np.ones(spec.shape), blocked, s, g)
        except NoPath:
            continue
        return s, g
    raise InfeasibleScenario(f"no connected start/goal pair within {params.goal_range} m")


def build_scenario(
    kind: str,
    seed: int,
    extent: tuple[float, float] = (50.0, 50.0),
    perception: PerceptionParams = PerceptionParams(),
    placement: PlacementParams = PlacementParams(),
    h_max: float = 0.3,
) -> Scenario:
    """Deterministic in ``(kind, seed, extent, params)``."""
    world = generate_world(kind, extent, seed)
    cloud = sample_point_cloud(world, perception.noise_sigma, seed)
    spec = GridSpec.covering(world.extent_x, world.extent_y, perception.cell_size)
    stack0 = perceive(cloud, spec, spec.center((0, 0)), perception)
    rng = np.random.default_rng([seed, 7])
    s, g = sample_start_goal(stack0.height, rng, placement, h_max)
    start, goal = spec.center(s), spec.center(g)
    stack = MapStack(stack0.height, stack0.cover, stack0.cover_area, build_goal_map(spec, goal), stack0.threat)
    threats = place_threats(stack, start, goal, rng, placement, h_max)
    suspected = tuple(
        (
            int(np.clip(t.position[0] + rng.integers(-2, 3), 0, spec.width - 1)),
            int(np.clip(t.position[1] + rng.integers(-2, 3), 0, spec.height - 1)),
        )
        for t in threats
    )
    heading = math.atan2(goal[1] - start[1], goal[0] - start[0])
    return Scenario(kind, seed, world, stack, start, heading, goal, threats, suspected)


def custom_scenario(
    height: np.ndarray,
    cover: np.ndarray,
    start: tuple[float, float],
    goal: tuple[float, float],
    threats: tuple[ThreatAgent, ...] = (),
    heading: float = 0.0,
    cover_radius: int = 1,
    name: str = "custom",
) -> Scenario:
    """A scenario from explicit height and cover arrays on a 1 m grid."""
    height = np.asarray(height, dtype=float)
    spec = GridSpec(height.shape[1], height.shape[0])
    cover = np.asarray(cover, dtype=float)
    stack = MapStack(
        HeightMap(spec, height),
        CoverMap(spec, cover),
        CoverMap(spec, dilate(cover, cover_radius)),
        build_goal_map(spec, goal),
        ThreatMap(spec, np.zeros(spec.shape)),
    )
    return Scenario(name, 0, None, stack, start, heading, goal, tuple(threats))
