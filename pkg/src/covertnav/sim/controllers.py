"""Action selection: the learned greedy policy and scripted controllers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..maps import MapStack
from ..rl.actions import ACTIONS, STOP
from ..rl.cql import QFunction, greedy_action
from ..rl.features import extract_features, wrap_angle
from .kinematics import RobotState, step


@dataclass(frozen=True)
class Observation:
    robot: RobotState
    stack: MapStack
    goal: tuple[float, float]
    waypoint: tuple[float, float]
    dt: float
    h_max: float


class Controller(Protocol):
    def act(self, obs: Observation, mask: np.ndarray) -> int: ...


@dataclass
class GreedyQ:
    """Argmax of a learned Q table over the feasible actions.

    Stopping leaves the state unchanged, so a deterministic greedy policy
    that stops once would stop forever. After a stop, the next step picks
    among the remaining feasible actions.
    """

    q: QFunction
    last: int | None = field(default=None, compare=False)

    def act(self, obs: Observation, mask: np.ndarray) -> int:
        s = extract_features(obs.stack, obs.robot.pose, obs.goal, obs.waypoint, obs.h_max)
        if self.last == STOP and mask.sum() > 1:
            mask = mask.copy()
            mask[STOP] = False
        self.last = greedy_action(self.q, s, mask)
        return self.last


@dataclass
class Follower:
    """One-step lookahead toward the waypoint.

    Scores each feasible action by the distance from its end pose to the
    waypoint plus ``turn_weight`` times the remaining heading error.
    """

    turn_weight: float = 0.5

    def act(self, obs: Observation, mask: np.ndarray) -> int:
        wx, wy = obs.waypoint
        best, best_score = -1, math.inf
        for a in np.flatnonzero(mask):
            nxt = step(obs.robot, tuple(ACTIONS[a]), obs.dt)
            err = wrap_angle(math.atan2(wy - nxt.y, wx - nxt.x) - nxt.heading)
            score = math.hypot(wx - nxt.x, wy - nxt.y) + self.turn_weight * abs(err)
            if score < best_score:
                best, best_score = int(a), score
        return best


@dataclass
class RandomWalk:
    rng: np.random.Generator

    def act(self, obs: Observation, mask: np.ndarray) -> int:
        return int(self.rng.choice(np.flatnonzero(mask)))


@dataclass
class EpsilonMix:
    """Delegate to ``inner`` but take a uniformly random feasible action with probability ``eps``."""

    inner: Controller
    rng: np.random.Generator
    eps: float = 0.1

    def act(self, obs: Observation, mask: np.ndarray) -> int:
        if self.rng.random() < self.eps:
            return int(self.rng.choice(np.flatnonzero(mask)))
        return self.inner.act(obs, mask)
