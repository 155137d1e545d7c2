"""Procedural 3D test environments and synthetic point clouds.

A world is a flat (optionally gently undulating) ground plane populated with
axis-aligned box objects.  Scenario mixes:

* ``urban``  - at least 70% walls/buildings, sparse vegetation
* ``forest`` - at least 70% trees/bushes
* ``mixed``  - neither structures nor vegetation above 60%
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

WORLD_VERSION = "world.v1"
KINDS = ("tree", "bush", "wall", "building", "rock")
STRUCTURAL = frozenset({"wall", "building"})
VEGETATION = frozenset({"tree", "bush"})
SCENARIOS = ("urban", "forest", "mixed")
MIN_EXTENT = 10.0

# footprint side ranges (m), height ranges (m), point density (pts / m^3)
CATALOGUE = {
    "tree": dict(side=(0.8, 1.6), height=(2.5, 6.0), density=12.0),
    "bush": dict(side=(1.0, 2.2), height=(0.6, 1.2), density=40.0),
    "wall": dict(length=(3.0, 7.0), thickness=(0.3, 0.5), height=(2.0, 3.0), density=30.0),
    "building": dict(side=(4.0, 8.0), height=(3.0, 6.0), density=8.0),
    "rock": dict(side=(0.5, 1.4), height=(0.3, 0.8), density=40.0),
}

GROUND_DENSITY = 3.0  # points per square metre
UNDULATION = 0.08  # metres, forest and mixed only


class WorldSizeError(ValueError):
    """Raised when a requested world extent is too small."""


@dataclass(frozen=True)
class PlacedObject:
    kind: str
    center_xy: tuple[float, float]
    footprint: tuple[float, float, float, float]  # x_min, x_max, y_min, y_max
    height: float
    point_density: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        if not self.height > 0:
            raise ValueError("object height must be positive")
        if not self.area > 0:
            raise ValueError("object footprint must have positive area")
        if not self.point_density > 0:
            raise ValueError("point density must be positive")

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.footprint
        return (x1 - x0) * (y1 - y0)

    @property
    def volume(self) -> float:
        return self.area * self.height

    def contains(self, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
        x0, x1, y0, y1 = self.footprint
        return (
            (pts[:, 0] >= x0 - slack)
            & (pts[:, 0] <= x1 + slack)
            & (pts[:, 1] >= y0 - slack)
            & (pts[:, 1] <= y1 + slack)
            & (pts[:, 2] >= -slack)
            & (pts[:, 2] <= self.height + slack)
        )


@dataclass
class World:
    extent_x: float
    extent_y: float
    objects: list[PlacedObject] = field(default_factory=list)
    ground_z: float = 0.0
    seed: int = 0
    scenario: str = "mixed"
    undulation: float = 0.0

    def __post_init__(self):
        if not (self.extent_x > 0 and self.extent_y > 0):
            raise WorldSizeError("world extents must be positive")

    def class_fractions(self) -> dict[str, float]:
        n = len(self.objects)
        if n == 0:
            return {"structural": 0.0, "vegetation": 0.0}
        s = sum(o.kind in STRUCTURAL for o in self.objects)
        v = sum(o.kind in VEGETATION for o in self.objects)
        return {"structural": s / n, "vegetation": v / n}

    def ground_height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.undulation == 0.0:
            return np.full(np.shape(x), self.ground_z, dtype=float)
        return self.ground_z + self.undulation * np.sin(0.7 * x) * np.cos(0.5 * y)

    def to_json(self) -> str:
        doc = {
            "version": WORLD_VERSION,
            "extent_x": self.extent_x,
            "extent_y": self.extent_y,
            "ground_z": self.ground_z,
            "seed": self.seed,
            "scenario": self.scenario,
            "undulation": self.undulation,
            "objects": [asdict(o) for o in self.objects],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "World":
        doc = json.loads(text)
        if doc.get("version") != WORLD_VERSION:
            raise ValueError(f"unsupported world document version {doc.get('version')!r}")
        objects = [
            PlacedObject(
                kind=o["kind"],
                center_xy=tuple(o["center_xy"]),
                footprint=tuple(o["footprint"]),
                height=o["height"],
                point_density=o["point_density"],
            )
            for o in doc["objects"]
        ]
        return cls(
            extent_x=doc["extent_x"],
            extent_y=doc["extent_y"],
            objects=objects,
            ground_z=doc["ground_z"],
            seed=doc["seed"],
            scenario=doc.get("scenario", "mixed"),
            undulation=doc.get("undulation", 0.0),
        )


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    # index of the generating object per point, -1 for ground; not part of the
    # sensor data, kept for ground-truth checks
    source: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return self.points

    def to_text(self) -> str:
        return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in self.points.tolist())

    @classmethod
    def from_text(cls, text: str) -> "PointCloud":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows:
            return cls()
        return cls(np.array(rows, dtype=float))


def _mix(scenario: str, n: int) -> list[str]:
    """Deterministic class counts for the scenario; kinds within a class are drawn later."""
    if scenario == "urban":
        n_struct = math.ceil(0.78 * n)
        n_veg = math.ceil(0.6 * (n - n_struct))
    elif scenario == "forest":
        n_veg = math.ceil(0.8 * n)
        n_struct = math.floor(0.1 * (n - n_veg))
    else:
        n_struct = round(0.4 * n)
        n_veg = round(0.45 * n)
    n_rock = n - n_struct - n_veg
    return ["S"] * n_struct + ["V"] * n_veg + ["R"] * n_rock


def _draw(kind: str, rng: np.random.Generator) -> tuple[float, float, float]:
    cat = CATALOGUE[kind]
    h = float(rng.uniform(*cat["height"]))
    if kind == "wall":
        length = float(rng.uniform(*cat["length"]))
        thick = float(rng.uniform(*cat["thickness"]))
        if rng.random() < 0.5:
            return length, thick, h
        return thick, length, h
    sx = float(rng.uniform(*cat["side"]))
    sy = float(rng.uniform(*cat["side"]))
    return sx, sy, h


def generate_world(
    scenario: str,
    extent: tuple[float, float] = (50.0, 50.0),
    seed: int = 0,
    density: float | None = None,
) -> World:
    """Place objects for ``scenario`` on an ``extent`` metre rectangle.

    ``density`` is objects per 100 m^2 (scenario default when None).
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    ex, ey = float(extent[0]), float(extent[1])
    if ex < MIN_EXTENT or ey < MIN_EXTENT:
        raise WorldSizeError(f"world extent {ex}x{ey} m is below the {MIN_EXTENT} m minimum")
    rng = np.random.default_rng(seed)
    if density is None:
        density = {"urban": 1.0, "forest": 1.8, "mixed": 1.4}[scenario]
    n = max(1, int(round(density * ex * ey / 100.0)))
    classes = _mix(scenario, n)
    rng.shuffle(classes)

    objects: list[PlacedObject] = []
    margin = 0.5
    for cls in classes:
        if cls == "S":
            kind = "building" if rng.random() < 0.25 else "wall"
        elif cls == "V":
            kind = "tree" if rng.random() < 0.45 else "bush"
        else:
            kind = "rock"
        placed = None
        for _ in range(50):
            sx, sy, h = _draw(kind, rng)
            if sx + 2 * margin >= ex or sy + 2 * margin >= ey:
                continue
            cx = float(rng.uniform(margin + sx / 2, ex - margin - sx / 2))
            cy = float(rng.uniform(margin + sy / 2, ey - margin - sy / 2))
            fp = (cx - sx / 2, cx + sx / 2, cy - sy / 2, cy + sy / 2)
            if any(_overlaps(fp, o.footprint, gap=1.0) for o in objects):
                continue
            placed = PlacedObject(kind, (cx, cy), fp, h, CATALOGUE[kind]["density"])
            break
        if placed is not None:
            objects.append(placed)
    # failed placements can upset the class mix on crowded worlds; trim to restore it
    objects = _rebalance(scenario, objects)
    und = UNDULATION if scenario in ("forest", "mixed") else 0.0
    return World(ex, ey, objects, 0.0, int(seed), scenario, und)


def _overlaps(a, b, gap: float) -> bool:
    return not (
        a[1] + gap <= b[0] or b[1] + gap <= a[0] or a[3] + gap <= b[2] or b[3] + gap <= a[2]
    )


def _rebalance(scenario: str, objects: list[PlacedObject]) -> list[PlacedObject]:
    def ok(objs):
        if not objs:
            return True
        n = len(objs)
        s = sum(o.kind in STRUCTURAL for o in objs) / n
        v = sum(o.kind in VEGETATION for o in objs) / n
        if scenario == "urban":
            return s >= 0.7
        if scenario == "forest":
            return v >= 0.7
        return s <= 0.6 and v <= 0.6

    objs = list(objects)
    while not ok(objs):
        n = len(objs)
        s = sum(o.kind in STRUCTURAL for o in objs) / n
        if scenario == "urban":
            drop = lambda o: o.kind not in STRUCTURAL  # noqa: E731
        elif scenario == "forest":
            drop = lambda o: o.kind not in VEGETATION  # noqa: E731
        elif s > 0.6:
            drop = lambda o: o.kind in STRUCTURAL  # noqa: E731
        else:
            drop = lambda o: o.kind in VEGETATION  # noqa: E731
        idx = max(k for k, o in enumerate(objs) if drop(o))
        del objs[idx]
    return objs


def sample_point_cloud(
    world: World,
    noise_sigma: float = 0.02,
    seed: int = 0,
    ground_density: float = GROUND_DENSITY,
) -> PointCloud:
    """Volumetric point samples for every object plus a ground layer.

    Object point counts are Poisson(density * volume). Ground is sampled at a
    fixed areal density outside object footprints.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    chunks = []
    sources = []
    for k, obj in enumerate(world.objects):
        count = int(rng.poisson(obj.point_density * obj.volume))
        x0, x1, y0, y1 = obj.footprint
        p = np.column_stack(
            [
                rng.uniform(x0, x1, count),
                rng.uniform(y0, y1, count),
                rng.uniform(0.0, obj.height, count),
            ]
        )
        chunks.append(p)
        sources.append(np.full(count, k, dtype=np.int64))

    n_ground = int(round(ground_density * world.extent_x * world.extent_y))
    gx = rng.uniform(0.0, world.extent_x, n_ground)
    gy = rng.uniform(0.0, world.extent_y, n_ground)
    keep = np.ones(n_ground, dtype=bool)
    for obj in world.objects:
        x0, x1, y0, y1 = obj.footprint
        keep &= ~((gx >= x0) & (gx <= x1) & (gy >= y0) & (gy <= y1))
    gx, gy = gx[keep], gy[keep]
    ground = np.column_stack([gx, gy, world.ground_height(gx, gy)])
    chunks.append(ground)
    sources.append(np.full(len(ground), -1, dtype=np.int64))

    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    src = np.concatenate(sources) if sources else np.zeros(0, dtype=np.int64)
    if noise_sigma > 0 and len(pts):
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    return PointCloud(pts, src)


def save_world(path: str | Path, world: World) -> None:
    Path(path).write_text(world.to_json() + "\n")


def load_world(path: str | Path) -> World:
    return World.from_json(Path(path).read_text())


def save_cloud(path: str | Path, cloud: PointCloud) -> None:
    Path(path).write_text(cloud.to_text())


def load_cloud(path: str | Path) -> PointCloud:
    return PointCloud.from_text(Path(path).read_text())


def fractions_for(worlds: Sequence[World]) -> list[dict[str, float]]:
    return [w.class_fractions() for w in worlds]
