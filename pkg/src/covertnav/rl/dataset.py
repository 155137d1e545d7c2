"""Offline transition datasets from scripted behaviour, with rotation/translation augmentation.

Binary layout (``dataset.v1``): the first line is a UTF-8 JSON header ending in
``\\n``; it is followed by ``header["count"]`` little-endian records of
``RECORD`` = ``<IBHBHBd`` (19 bytes, no padding):

    episode   uint32   source episode index
    augment   uint8    0 for the original, k >= 1 for the k-th augmented copy
    state     uint16   StateFeatures index
    action    uint8    ActionIndex
    next      uint16   StateFeatures index of the successor
    terminal  uint8    1 when the successor ends the episode
    reward    float64  total reward
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..atave import AtaveParams, DegenerateEvidence, belief_update, intel_prior, observation_likelihood, threat_field
from ..maps import CoverMap, GridSpec, HeightMap, MapStack, ThreatMap, build_goal_map, project_point, swept_cells
from ..sim.controllers import EpsilonMix, Follower, Observation, RandomWalk
from ..sim.episode import SimParams, plan
from ..sim.kinematics import RobotState, feasible_actions, modulate_velocity, obstacle_density, step
from ..sim.planning import NoPath, Route, lookahead_point
from ..sim.scenario import InfeasibleScenario, PerceptionParams, PlacementParams, perceive, place_threats, sample_start_goal
from ..worldgen import World, sample_point_cloud
from .actions import decode
from .cql import TransitionArrays
from .features import extract_features, wrap_angle
from .rewards import RewardWeights, score_step

log = logging.getLogger(__name__)

DATASET_VERSION = "dataset.v1"
RECORD = struct.Struct("<IBHBHBd")
BEHAVIOURS = ("random_walk", "straight_to_goal", "greedy_cover")


@dataclass(frozen=True)
class DatasetParams:
    goal_range: tuple[float, float] = (10.0, 30.0)
    max_steps: int = 150
    epsilon: float = 0.1
    max_shift: int = 5


@dataclass
class EpisodeRecord:
    """Everything needed to re-score one (possibly augmented) episode."""

    episode: int
    augment: int
    behaviour: str
    stack: MapStack
    goal: tuple[float, float]
    poses: list[tuple[float, float, float]]  # T + 1 poses
    waypoints: list[tuple[float, float]]  # T feature waypoints
    actions: list[int]
    route: list[tuple[float, float]]  # the threat-aware plan that defines goal progress
    rotation: int = 0  # quarter turns counter-clockwise
    shift: tuple[int, int] = (0, 0)


@dataclass
class Dataset:
    header: dict
    episode: np.ndarray
    augment: np.ndarray
    transitions: TransitionArrays
    records: list[EpisodeRecord] = field(default_factory=list)
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.transitions)

    @classmethod
    def empty(cls, header: dict) -> "Dataset":
        z = np.zeros(0, dtype=np.int64)
        return cls({**header, "count": 0}, z, z, TransitionArrays(z, z, np.zeros(0), z, np.zeros(0, dtype=bool)))


# --- augmentation -----------------------------------------------------------------

def rotate_point(p: tuple[float, float], spec: GridSpec) -> tuple[float, float]:
    """Quarter turn counter-clockwise of the grid frame: (x, y) -> (H - y, x)."""
    x, y = spec.to_cell_units(*p)
    return ((spec.height - y) * spec.cell_size, x * spec.cell_size)


def rotate_stack(stack: MapStack, goal_xy: tuple[float, float]) -> MapStack:
    spec = stack.spec
    new = GridSpec(spec.height, spec.width, spec.cell_size)

    def rot(a: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.rot90(a, -1))

    return MapStack(
        HeightMap(new, rot(stack.height.values)),
        CoverMap(new, rot(stack.cover.values)),
        CoverMap(new, rot(stack.cover_area.values)),
        build_goal_map(new, goal_xy),
        ThreatMap(new, rot(stack.threat.values)),
    )


def shift_stack(stack: MapStack, di: int, dj: int, goal_xy: tuple[float, float]) -> MapStack:
    """Cyclic integer-cell translation of every channel."""
    spec = stack.spec

    def roll(a: np.ndarray) -> np.ndarray:
        return np.roll(a, (dj, di), axis=(0, 1))

    return MapStack(
        HeightMap(spec, roll(stack.height.values)),
        CoverMap(spec, roll(stack.cover.values)),
        CoverMap(spec, roll(stack.cover_area.values)),
        build_goal_map(spec, goal_xy),
        ThreatMap(spec, roll(stack.threat.values)),
    )


def augment_record(rec: EpisodeRecord, quarter_turns: int, di: int, dj: int, index: int) -> EpisodeRecord:
    """Rotate by ``quarter_turns`` x 90 degrees, then translate by whole cells.

    Rotations are proper, so v_x and omega_z keep their signs and the action
    indices carry over unchanged; headings advance by the rotation angle.
    """
    stack, goal = rec.stack, rec.goal
    poses = list(rec.poses)
    wps = list(rec.waypoints)
    route = list(rec.route)
    for _ in range(quarter_turns):
        spec = stack.spec
        goal = rotate_point(goal, spec)
        route = [rotate_point(r, spec) for r in route]
        poses = [(*rotate_point(p[:2], spec), wrap_angle(p[2] + math.pi / 2)) for p in poses]
        wps = [rotate_point(w, spec) for w in wps]
        stack = rotate_stack(stack, goal)
    cs = stack.spec.cell_size
    dx, dy = di * cs, dj * cs
    goal = (goal[0] + dx, goal[1] + dy)
    poses = [(p[0] + dx, p[1] + dy, p[2]) for p in poses]
    wps = [(w[0] + dx, w[1] + dy) for w in wps]
    route = [(r[0] + dx, r[1] + dy) for r in route]
    stack = shift_stack(stack, di, dj, goal)
    return EpisodeRecord(
        rec.episode, index, rec.behaviour, stack, goal, poses, wps, list(rec.actions), route, quarter_turns, (di, dj)
    )


def shift_range(points: Sequence[tuple[float, float]], spec: GridSpec, limit: int) -> tuple[range, range]:
    """Integer shifts that keep every point strictly inside the grid."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    cs = spec.cell_size
    lo_i = max(-limit, -math.floor((min(xs) - spec.x_min) / cs))
    hi_i = min(limit, math.ceil((spec.x_max - max(xs)) / cs) - 1)
    lo_j = max(-limit, -math.floor((min(ys) - spec.y_min) / cs))
    hi_j = min(limit, math.ceil((spec.y_max - max(ys)) / cs) - 1)
    return range(lo_i, max(lo_i, hi_i) + 1), range(lo_j, max(lo_j, hi_j) + 1)


# --- scoring ---------------------------------------------------------------------

def score_record(
    rec: EpisodeRecord, weights: RewardWeights, h_max: float, goal_radius: float
) -> list[tuple[int, int, float, int, bool]]:
    """(state, action, reward, next_state, terminal) for every step of ``rec``."""
    out = []
    n = len(rec.actions)
    to_go = Route(rec.route).distance
    for t in range(n):
        p0, p1 = rec.poses[t], rec.poses[t + 1]
        s = extract_features(rec.stack, p0, rec.goal, rec.waypoints[t], h_max).index
        wp_next = rec.waypoints[t + 1] if t + 1 < n else rec.waypoints[t]
        s2 = extract_features(rec.stack, p1, rec.goal, wp_next, h_max).index
        r = score_step(rec.stack, p0[:2], p1[:2], rec.goal, weights, h_max, to_go).total
        terminal = math.dist(p1[:2], rec.goal) <= goal_radius
        out.append((s, rec.actions[t], r, s2, terminal))
    return out


# --- behaviour rollouts ------------------------------------------------------------

def _episode_stack(base: MapStack, start, goal, rng, placement, atave, sim) -> tuple[MapStack, list]:
    """Goal map, one initial scan and a fixed threat field for a dataset episode."""
    spec = base.spec
    stack = MapStack(base.height, base.cover, base.cover_area, build_goal_map(spec, goal), base.threat)
    threats = place_threats(stack, start, goal, rng, placement, sim.h_max)
    suspected = [
        (
            int(np.clip(t.position[0] + rng.integers(-2, 3), 0, spec.width - 1)),
            int(np.clip(t.position[1] + rng.integers(-2, 3), 0, spec.height - 1)),
        )
        for t in threats
    ]
    s_cell, g_cell = project_point(spec, start), project_point(spec, goal)
    belief = intel_prior(spec, suspected)
    lik, _ = observation_likelihood(stack.height, s_cell, [t.position for t in threats], rng, atave)
    try:
        belief = belief_update(belief, lik)
    except DegenerateEvidence as exc:
        belief = exc.prior
    cover_path = plan("greedy_cover", stack, s_cell, g_cell, sim)
    stack = stack.with_threat(threat_field(cover_path, belief, stack.height, stack.cover, stack.goal, atave))
    return stack, plan("cql", stack, s_cell, g_cell, sim)


def rollout(
    stack: MapStack,
    path: list,
    start: tuple[float, float],
    goal: tuple[float, float],
    behaviour: str,
    rng: np.random.Generator,
    params: DatasetParams,
    sim: SimParams,
    episode: int,
) -> EpisodeRecord:
    spec = stack.spec

    def clear(p0, p1) -> bool:
        h = stack.height.values
        return all(spec.contains(c) and h[c[1], c[0]] <= sim.h_max for c in swept_cells(spec, p0, p1))

    if behaviour == "random_walk":
        ctrl = RandomWalk(rng)
    else:
        ctrl = EpsilonMix(Follower(), rng, params.epsilon)
    direct = None
    if behaviour == "straight_to_goal":
        direct = plan("shortest_path", stack, project_point(spec, start), project_point(spec, goal), sim)
    heading = math.atan2(goal[1] - start[1], goal[0] - start[0]) + float(rng.normal(0.0, 0.5))
    robot = RobotState(start[0], start[1], wrap_angle(heading))
    poses, wps, actions = [robot.pose], [], []
    for _ in range(params.max_steps):
        wp = lookahead_point(path, robot.xy, spec.center, sim.lookahead, clear)
        target = wp
        if direct is not None:
            # head straight for the goal, skirting obstacles along the shortest path
            target = goal if clear(robot.xy, goal) else lookahead_point(direct, robot.xy, spec.center, sim.lookahead, clear)
        mask = feasible_actions(robot, stack.height, sim.h_max, sim.dt)
        a = ctrl.act(Observation(robot, stack, goal, target, sim.dt, sim.h_max), mask)
        cell = project_point(spec, robot.xy)
        cmd = modulate_velocity(
            decode(a), min(1.0, max(0.0, stack.threat[cell])), obstacle_density(stack.height, cell, sim.h_max)
        )
        robot = step(robot, cmd, sim.dt)
        wps.append(wp)
        actions.append(a)
        poses.append(robot.pose)
        if math.dist(robot.xy, goal) <= sim.goal_radius:
            break
    route = Route.from_cells(path, spec.center, goal)
    return EpisodeRecord(episode, 0, behaviour, stack, goal, poses, wps, actions, [tuple(p) for p in route.points.tolist()])


def build_dataset(
    worlds: Sequence[World],
    episodes: int,
    augmentations: int,
    seed: int,
    params: DatasetParams = DatasetParams(),
    sim: SimParams = SimParams(),
    atave: AtaveParams = AtaveParams(),
    perception: PerceptionParams = PerceptionParams(),
    placement: PlacementParams = PlacementParams(),
    weights: RewardWeights = RewardWeights(),
    keep_records: bool = False,
) -> Dataset:
    """Roll out the behaviour mixture on the given worlds and score every step.

    Episode ``e`` uses world ``e mod len(worlds)`` and behaviour ``e mod 3``.
    Each episode is followed by ``augmentations`` rotated and translated copies
    whose rewards are recomputed from the transformed maps.
    """
    header = {
        "version": DATASET_VERSION,
        "seed": seed,
        "episodes": episodes,
        "augmentations": augmentations,
        "goal_range": list(params.goal_range),
        "params": asdict(params),
        "sim": asdict(sim),
        "weights": asdict(weights),
        "worlds": [w.seed for w in worlds],
    }
    if episodes == 0:
        return Dataset.empty(header)
    if not worlds:
        raise ValueError("need at least one world")
    placement = PlacementParams(**{**asdict(placement), "goal_range": params.goal_range})
    bases: dict[int, MapStack] = {}
    cols: list[list] = [[], [], [], [], [], [], []]
    records: list[EpisodeRecord] = []
    skipped = 0
    for e in range(episodes):
        w = e % len(worlds)
        world = worlds[w]
        if w not in bases:
            cloud = sample_point_cloud(world, perception.noise_sigma, world.seed)
            spec = GridSpec.covering(world.extent_x, world.extent_y, perception.cell_size)
            bases[w] = perceive(cloud, spec, spec.center((0, 0)), perception)
        base = bases[w]
        spec = base.spec
        rng = np.random.default_rng([seed, e])
        try:
            s, g = sample_start_goal(base.height, rng, placement, sim.h_max)
            start, goal = spec.center(s), spec.center(g)
            stack, path = _episode_stack(base, start, goal, rng, placement, atave, sim)
        except (InfeasibleScenario, NoPath):
            skipped += 1
            continue
        behaviour = BEHAVIOURS[e % len(BEHAVIOURS)]
        rec = rollout(stack, path, start, goal, behaviour, rng, params, sim, e)
        copies = [rec]
        for k in range(augmentations):
            turns = 1 + (k % 3)
            rot_spec = spec if turns % 2 == 0 else GridSpec(spec.height, spec.width, spec.cell_size)
            probe = augment_record(rec, turns, 0, 0, k + 1)
            ri, rj = shift_range(probe.poses + [probe.goal] + probe.waypoints, rot_spec, params.max_shift)
            di, dj = int(rng.choice(ri)), int(rng.choice(rj))
            copies.append(augment_record(rec, turns, di, dj, k + 1))
        for c in copies:
            for s0, a, r, s1, term in score_record(c, weights, sim.h_max, sim.goal_radius):
                for col, v in zip(cols, (c.episode, c.augment, s0, a, r, s1, term)):
                    col.append(v)
        if keep_records:
            records.extend(copies)
    if skipped:
        log.warning("skipped %d of %d episodes: no feasible start/goal", skipped, episodes)
    header["count"] = len(cols[0])
    header["skipped"] = skipped
    return Dataset(
        header,
        np.asarray(cols[0], dtype=np.int64),
        np.asarray(cols[1], dtype=np.int64),
        TransitionArrays(cols[2], cols[3], cols[4], cols[5], cols[6]),
        records,
        skipped,
    )


# --- file format -------------------------------------------------------------------

def save_dataset(path: str | Path, data: Dataset) -> None:
    header = {**data.header, "count": len(data), "record": RECORD.format}
    t = data.transitions
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for k in range(len(data)):
            fh.write(
                RECORD.pack(
                    int(data.episode[k]),
                    int(data.augment[k]),
                    int(t.states[k]),
                    int(t.actions[k]),
                    int(t.next_states[k]),
                    int(t.terminals[k]),
                    float(t.rewards[k]),
                )
            )


def load_dataset(path: str | Path) -> Dataset:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: bad dataset header") from exc
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {header.get('version')!r}")
        body = fh.read()
    n = header["count"]
    if len(body) != n * RECORD.size:
        raise ValueError(f"{path}: expected {n} records, found {len(body) / RECORD.size:g}")
    rows = list(RECORD.iter_unpack(body))
    arr = np.array(rows, dtype=float).reshape(n, 7) if n else np.zeros((0, 7))
    return Dataset(
        header,
        arr[:, 0].astype(np.int64),
        arr[:, 1].astype(np.int64),
        TransitionArrays(arr[:, 2], arr[:, 3], arr[:, 6], arr[:, 4], arr[:, 5] > 0),
    )
