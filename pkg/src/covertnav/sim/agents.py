"""Threat agents: static or patrolling observers that see the robot by line of sight."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from ..atave import line_of_sight
from ..maps import HeightMap

Cell = tuple[int, int]


@dataclass(frozen=True)
class ThreatAgent:
    position: Cell
    eye_height: float = 1.0
    max_range: float = 10.0
    waypoints: tuple[Cell, ...] = field(default=())
    dwell: int = 10  # steps spent at each patrol waypoint

    @property
    def motion(self) -> str:
        return "patrol" if self.waypoints else "static"

    def at_step(self, k: int) -> "ThreatAgent":
        """The agent as it stands at simulation step ``k``."""
        if not self.waypoints:
            return self
        loop = (self.position,) + self.waypoints
        pos = loop[(k // self.dwell) % len(loop)]
        return ThreatAgent(pos, self.eye_height, self.max_range)

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "eye_height": self.eye_height,
            "max_range": self.max_range,
            "waypoints": [list(w) for w in self.waypoints],
            "dwell": self.dwell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThreatAgent":
        return cls(
            tuple(d["position"]),
            float(d["eye_height"]),
            float(d["max_range"]),
            tuple(tuple(w) for w in d.get("waypoints", ())),
            int(d.get("dwell", 10)),
        )


def sees(agent: ThreatAgent, robot: Cell, height: HeightMap) -> bool:
    return line_of_sight(height, agent.position, robot, agent.eye_height, agent.max_range)


def detect(robot: Cell, threats: Sequence[ThreatAgent], height: HeightMap) -> bool:
    """True when any threat has line of sight to the robot's cell."""
    return any(sees(t, robot, height) for t in threats)
