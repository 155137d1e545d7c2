"""Closed-loop episodes and their per-step traces."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..atave import AtaveParams, DegenerateEvidence, ThreatBelief, belief_update, intel_prior, observation_likelihood, threat_field
from ..maps import MapStack, project_point, swept_cells
from ..rl.actions import V_MAX, decode
from ..rl.cql import QFunction
from ..rl.rewards import RewardWeights, score_step
from .agents import detect
from .controllers import Controller, Follower, GreedyQ, Observation
from .kinematics import RobotState, feasible_actions, modulate_velocity, obstacle_density, step
from .planning import NoPath, Route, astar, lookahead_point, path_length
from .scenario import InfeasibleScenario, Scenario

POLICIES = ("cql", "shortest_path", "greedy_cover")
TERMINATIONS = ("goal", "detected", "collision", "timeout")


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.2
    h_max: float = 0.3
    goal_radius: float = 0.5
    detect_persist: int = 3
    cover_threshold: float = 0.5
    replan_every: int = 5
    lookahead: float = 2.0
    timeout_factor: float = 4.0
    min_timeout_steps: int = 50
    cover_bias: float = 0.1
    threat_weight: float = 20.0


@dataclass(frozen=True)
class EpisodeMetrics:
    success: bool
    navigation_time: float
    trajectory_length: float
    threat_exposure: float
    cover_utilization: float
    termination: str
    steps: int

    def __post_init__(self):
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")
        if self.success != (self.termination == "goal"):
            raise ValueError("success must coincide with reaching the goal")
        for v in (self.threat_exposure, self.cover_utilization):
            if not 0.0 <= v <= 1.0:
                raise ValueError("fractions must lie in [0, 1]")


# --- planning costs -------------------------------------------------------------

def cover_cost(stack: MapStack, bias: float) -> np.ndarray:
    return 1.0 - stack.cover_area.values + bias


def plan_cost(policy: str, stack: MapStack, params: SimParams) -> np.ndarray:
    """Per-cell entry cost for the planner behind each policy."""
    if policy == "shortest_path":
        return np.ones(stack.spec.shape)
    base = cover_cost(stack, params.cover_bias)
    if policy == "greedy_cover":
        return base
    threat = stack.threat.values
    peak = threat.max()
    return base + (params.threat_weight * threat / peak if peak > 0 else 0.0)


def plan(policy: str, stack: MapStack, start: tuple[int, int], goal: tuple[int, int], params: SimParams):
    blocked = stack.height.values > params.h_max
    return astar(plan_cost(policy, stack, params), blocked, start, goal)


def timeout_steps(stack: MapStack, start, goal, params: SimParams) -> int:
    """A multiple of the full-speed step count along the unit-cost shortest path."""
    spec = stack.spec
    try:
        path = plan("shortest_path", stack, start, goal, params)
    except NoPath as exc:
        raise InfeasibleScenario(str(exc)) from exc
    n = path_length(path, spec.cell_size) / (V_MAX * params.dt)
    return max(params.min_timeout_steps, math.ceil(params.timeout_factor * n))


def remaining(path: list, cell) -> list:
    """The path from the entry nearest ``cell`` onward, prefixed by ``cell``."""
    k = min(range(len(path)), key=lambda n: (path[n][0] - cell[0]) ** 2 + (path[n][1] - cell[1]) ** 2)
    rest = path[k:]
    return rest if rest and rest[0] == cell else [cell] + rest


# --- episode --------------------------------------------------------------------

def _off_grid_or_blocked(stack: MapStack, cells, h_max: float) -> bool:
    spec = stack.spec
    h = stack.height.values
    return any(not spec.contains(c) or h[c[1], c[0]] > h_max for c in cells)


def run_episode(
    scenario: Scenario,
    policy: str,
    q: QFunction | None = None,
    params: SimParams = SimParams(),
    atave: AtaveParams = AtaveParams(),
    weights: RewardWeights = RewardWeights(),
    seed: int = 0,
    atave_enabled: bool = True,
    controller: Controller | None = None,
) -> tuple[EpisodeMetrics, list[dict]]:
    """Simulate one episode and return its metrics and per-step trace rows.

    ``policy`` picks the planner: ``cql`` plans on cover plus the live threat
    field (zeroed when ``atave_enabled`` is false) and acts with the greedy Q
    policy; the baselines plan once and track the plan with ``Follower``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "cql" and q is None and controller is None:
        raise ValueError("the cql policy needs a Q function")
    spec = scenario.spec
    stack = scenario.stack
    start_cell = project_point(spec, scenario.start)
    goal_cell = project_point(spec, scenario.goal)
    if start_cell is None or goal_cell is None:
        raise InfeasibleScenario("start and goal must lie on the grid")
    max_steps = timeout_steps(stack, start_cell, goal_cell, params)

    if controller is None:
        controller = GreedyQ(q) if policy == "cql" else Follower()
    tracks_threat = policy == "cql" and atave_enabled
    rng = np.random.default_rng([seed, 11])
    belief = intel_prior(spec, scenario.suspected) if scenario.suspected else ThreatBelief.uniform(spec)
    path = plan("greedy_cover" if policy == "cql" else policy, stack, start_cell, goal_cell, params)

    def clear(p0, p1) -> bool:
        return not _off_grid_or_blocked(stack, swept_cells(spec, p0, p1), params.h_max)

    robot = RobotState(scenario.start[0], scenario.start[1], scenario.start_heading, 0.0)
    rows: list[dict] = []
    streak = detected_steps = cover_steps = 0
    length = 0.0
    termination = "timeout"
    if math.dist(robot.xy, scenario.goal) <= params.goal_radius:
        max_steps = 0
        termination = "goal"

    for k in range(max_steps):
        cell = project_point(spec, robot.xy)
        threats = [t.at_step(k) for t in scenario.threats]
        if tracks_threat:
            lik, _ = observation_likelihood(stack.height, cell, [t.position for t in threats], rng, atave)
            try:
                belief = belief_update(belief, lik)
            except DegenerateEvidence as exc:
                belief = exc.prior
            if k % params.replan_every == 0:
                field = threat_field(remaining(path, cell), belief, stack.height, stack.cover, stack.goal, atave)
                stack = stack.with_threat(field)
                try:
                    path = plan("cql", stack, cell, goal_cell, params)
                except NoPath:
                    pass
        elif policy == "cql" and k % params.replan_every == 0:
            try:
                path = plan("cql", stack, cell, goal_cell, params)
            except NoPath:
                pass

        waypoint = lookahead_point(path, robot.xy, spec.center, params.lookahead, clear)
        obs = Observation(robot, stack, scenario.goal, waypoint, params.dt, params.h_max)
        mask = feasible_actions(robot, stack.height, params.h_max, params.dt)
        action = controller.act(obs, mask)
        threat_level = min(1.0, max(0.0, stack.threat[cell]))
        command = modulate_velocity(decode(action), threat_level, obstacle_density(stack.height, cell, params.h_max))
        nxt = step(robot, command, params.dt)

        route = Route.from_cells(path, spec.center, scenario.goal)
        terms = score_step(stack, robot.xy, nxt.xy, scenario.goal, weights, params.h_max, route.distance)
        swept_bad = terms.collision != 0.0
        new_cell = project_point(spec, nxt.xy)
        if new_cell is None:
            swept_bad = True
            new_cell = cell
        seen = detect(new_cell, threats, stack.height)
        in_cover = stack.cover_area[new_cell] >= params.cover_threshold
        streak = streak + 1 if seen else 0
        detected_steps += seen
        cover_steps += in_cover
        length += math.hypot(nxt.x - robot.x, nxt.y - robot.y)

        end = None
        if swept_bad:
            end = "collision"
        elif streak >= params.detect_persist:
            end = "detected"
        elif math.dist(nxt.xy, scenario.goal) <= params.goal_radius:
            end = "goal"
        elif k + 1 == max_steps:
            end = "timeout"
        rows.append(
            {
                "step": k,
                "t": nxt.time,
                "prev": [robot.x, robot.y, robot.heading],
                "pose": [nxt.x, nxt.y, nxt.heading],
                "action": action,
                "command": [command[0], command[1]],
                "cell": [new_cell[0], new_cell[1]],
                "detected": bool(seen),
                "in_cover": bool(in_cover),
                "threat_level": threat_level,
                "rewards": {
                    "cover": terms.cover,
                    "threat": terms.threat,
                    "goal": terms.goal,
                    "collision": terms.collision,
                    "total": terms.total,
                },
                "termination": end,
            }
        )
        robot = nxt
        if end is not None:
            termination = end
            break

    n = len(rows)
    metrics = EpisodeMetrics(
        success=termination == "goal",
        navigation_time=n * params.dt,
        trajectory_length=length,
        threat_exposure=detected_steps / n if n else 0.0,
        cover_utilization=cover_steps / n if n else 0.0,
        termination=termination,
        steps=n,
    )
    return metrics, rows


def replay_metrics(rows: Sequence[dict], dt: float) -> EpisodeMetrics:
    """Recompute episode metrics from trace rows alone."""
    n = len(rows)
    if n == 0:
        return EpisodeMetrics(True, 0.0, 0.0, 0.0, 0.0, "goal", 0)
    length = 0.0
    for r in rows:
        length += math.hypot(r["pose"][0] - r["prev"][0], r["pose"][1] - r["prev"][1])
    end = rows[-1]["termination"]
    return EpisodeMetrics(
        success=end == "goal",
        navigation_time=n * dt,
        trajectory_length=length,
        threat_exposure=sum(r["detected"] for r in rows) / n,
        cover_utilization=sum(r["in_cover"] for r in rows) / n,
        termination=end,
        steps=n,
    )


def write_trace(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True))
            fh.write("\n")


def read_trace(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def metrics_dict(m: EpisodeMetrics) -> dict:
    return asdict(m)
