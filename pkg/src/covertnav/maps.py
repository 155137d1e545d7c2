"""Grid maps built from point clouds: cover density, max height and goal maps.

Arrays are stored with shape ``(H, W)`` and indexed ``values[j, i]`` where
``i`` is the column along x and ``j`` the row along y.  Cell tuples are always
written ``(i, j)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .raster import segment_cells
from .worldgen import PointCloud

Cell = tuple[int, int]


class GridError(ValueError):
    """Raised for malformed grid specifications or out-of-extent inputs."""


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    cell_size: float = 1.0
    x_min: float = 0.0
    y_min: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise GridError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.cell_size > 0:
            raise GridError(f"cell size must be positive, got {self.cell_size}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def x_max(self) -> float:
        return self.x_min + self.width * self.cell_size

    @property
    def y_max(self) -> float:
        return self.y_min + self.height * self.cell_size

    def contains(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def center(self, cell: Cell) -> tuple[float, float]:
        i, j = cell
        return (
            self.x_min + (i + 0.5) * self.cell_size,
            self.y_min + (j + 0.5) * self.cell_size,
        )

    def to_cell_units(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.x_min) / self.cell_size, (y - self.y_min) / self.cell_size)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays, each of shape (H, W)."""
        xs = self.x_min + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.y_min + (np.arange(self.height) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)

    @classmethod
    def covering(cls, extent_x: float, extent_y: float, cell_size: float = 1.0) -> "GridSpec":
        return cls(
            width=max(1, math.ceil(extent_x / cell_size)),
            height=max(1, math.ceil(extent_y / cell_size)),
            cell_size=cell_size,
        )


def project_point(spec: GridSpec, point: tuple[float, float]) -> Cell | None:
    """Floor projection of a world point onto the grid; ``None`` when outside."""
    i = math.floor((point[0] - spec.x_min) / spec.cell_size)
    j = math.floor((point[1] - spec.y_min) / spec.cell_size)
    if 0 <= i < spec.width and 0 <= j < spec.height:
        return (i, j)
    return None


def project_points(spec: GridSpec, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``project_point``: returns column, row and in-grid mask."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    i = np.floor((xy[:, 0] - spec.x_min) / spec.cell_size).astype(np.int64)
    j = np.floor((xy[:, 1] - spec.y_min) / spec.cell_size).astype(np.int64)
    inside = (i >= 0) & (i < spec.width) & (j >= 0) & (j < spec.height)
    return i, j, inside


@dataclass
class GridMap:
    """A scalar field over a ``GridSpec``; ``role`` names its meaning."""

    spec: GridSpec
    values: np.ndarray
    role: str = "grid"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise GridError(f"values shape {self.values.shape} != grid shape {self.spec.shape}")

    def __getitem__(self, cell: Cell) -> float:
        return float(self.values[cell[1], cell[0]])


class CoverMap(GridMap):
    def __init__(self, spec: GridSpec, values: np.ndarray, role: str = "cover"):
        super().__init__(spec, values, role)


class HeightMap(GridMap):
    def __init__(self, spec: GridSpec, values: np.ndarray, role: str = "height"):
        super().__init__(spec, values, role)


class ThreatMap(GridMap):
    def __init__(self, spec: GridSpec, values: np.ndarray, role: str = "threat"):
        super().__init__(spec, values, role)


@dataclass
class GoalMap:
    spec: GridSpec
    distance: np.ndarray
    angle: np.ndarray
    goal: tuple[float, float] = field(default=(0.0, 0.0))

    def __getitem__(self, cell: Cell) -> float:
        return float(self.distance[cell[1], cell[0]])


def build_cover_map(cloud: PointCloud, cover_indices: Iterable[int], spec: GridSpec) -> CoverMap:
    """Per-cell fraction of projected points that belong to cover objects.

    Cells that receive no points are 0.
    """
    pts = cloud.as_array()
    total = np.zeros(spec.shape, dtype=np.int64)
    cover = np.zeros(spec.shape, dtype=np.int64)
    if len(pts):
        i, j, inside = project_points(spec, pts[:, :2])
        np.add.at(total, (j[inside], i[inside]), 1)
        idx = np.fromiter(cover_indices, dtype=np.int64)
        if idx.size:
            is_cover = np.zeros(len(pts), dtype=bool)
            is_cover[idx] = True
            sel = inside & is_cover
            np.add.at(cover, (j[sel], i[sel]), 1)
    values = np.zeros(spec.shape, dtype=float)
    np.divide(cover, total, out=values, where=total > 0)
    return CoverMap(spec, values)


def build_height_map(cloud: PointCloud, spec: GridSpec, empty_fill: float = 0.0) -> HeightMap:
    """Per-cell maximum z of projected points; empty cells get ``empty_fill``."""
    pts = cloud.as_array()
    values = np.full(spec.shape, -np.inf)
    if len(pts):
        i, j, inside = project_points(spec, pts[:, :2])
        np.maximum.at(values, (j[inside], i[inside]), pts[inside, 2])
    values[np.isneginf(values)] = empty_fill
    return HeightMap(spec, values)


def build_goal_map(spec: GridSpec, goal: tuple[float, float]) -> GoalMap:
    """Normalised distance and goal-to-cell bearing for every cell center."""
    xg, yg = goal
    if not (spec.x_min <= xg < spec.x_max and spec.y_min <= yg < spec.y_max):
        raise GridError(f"goal {goal} lies outside the grid extent")
    xc, yc = spec.centers()
    dist = np.sqrt((xc - xg) ** 2 + (yc - yg) ** 2)
    peak = dist.max()
    if peak > 0:
        dist = dist / peak
    # scalar libm atan2 per cell; numpy's vectorised kernel can differ in the last bit
    angle = np.vectorize(math.atan2, otypes=[float])(yc - yg, xc - xg)
    return GoalMap(spec, dist, angle, goal=(float(xg), float(yg)))


def dilate(values: np.ndarray, radius: int) -> np.ndarray:
    """Max filter over a (2r+1)^2 window, edges handled by truncation."""
    if radius <= 0:
        return values.copy()
    h, w = values.shape
    padded = np.full((h + 2 * radius, w + 2 * radius), -np.inf)
    padded[radius : radius + h, radius : radius + w] = values
    out = np.full_like(values, -np.inf)
    for dj in range(2 * radius + 1):
        for di in range(2 * radius + 1):
            np.maximum(out, padded[dj : dj + h, di : di + w], out=out)
    return out


# --- text grid format -------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def write_grid(fh: TextIO, role: str, spec: GridSpec, values: np.ndarray) -> None:
    fh.write(
        f"gridmap {role} {spec.width} {spec.height} {_fmt(spec.cell_size)} "
        f"{_fmt(spec.x_min)} {_fmt(spec.y_min)}\n"
    )
    for row in np.asarray(values):
        fh.write(" ".join(_fmt(v) for v in row))
        fh.write("\n")


def read_grids(fh: TextIO) -> list[tuple[str, GridSpec, np.ndarray]]:
    """Parse every header+data block in a grid text file."""
    blocks = []
    lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    k = 0
    while k < len(lines):
        head = lines[k].split()
        if len(head) != 7 or head[0] != "gridmap":
            raise GridError(f"bad grid header: {lines[k]!r}")
        role = head[1]
        w, h = int(head[2]), int(head[3])
        spec = GridSpec(w, h, float(head[4]), float(head[5]), float(head[6]))
        rows = lines[k + 1 : k + 1 + h]
        if len(rows) != h:
            raise GridError(f"grid {role!r} truncated: expected {h} rows")
        values = np.array([[float(t) for t in r.split()] for r in rows], dtype=float)
        if values.shape != (h, w):
            raise GridError(f"grid {role!r} has shape {values.shape}, header says {(h, w)}")
        blocks.append((role, spec, values))
        k += 1 + h
    return blocks


def save_map(path: str | Path, m: GridMap | GoalMap) -> None:
    with open(path, "w") as fh:
        if isinstance(m, GoalMap):
            write_grid(fh, "goal_distance", m.spec, m.distance)
            write_grid(fh, "goal_angle", m.spec, m.angle)
        else:
            write_grid(fh, m.role, m.spec, m.values)


_ROLE_TYPES = {"cover": CoverMap, "height": HeightMap, "threat": ThreatMap}


def load_map(path: str | Path) -> GridMap | GoalMap:
    with open(path) as fh:
        blocks = read_grids(fh)
    if not blocks:
        raise GridError(f"{path}: no grid blocks")
    if blocks[0][0] == "goal_distance":
        if len(blocks) != 2 or blocks[1][0] != "goal_angle":
            raise GridError(f"{path}: goal map needs distance and angle blocks")
        return GoalMap(blocks[0][1], blocks[0][2], blocks[1][2])
    role, spec, values = blocks[0]
    cls = _ROLE_TYPES.get(role)
    if cls is None:
        return GridMap(spec, values, role)
    return cls(spec, values)


def swept_cells(spec: GridSpec, p0: tuple[float, float], p1: tuple[float, float]) -> list[Cell]:
    """Supercover cells of a world-frame segment; may include off-grid cells."""
    a = spec.to_cell_units(*p0)
    b = spec.to_cell_units(*p1)
    return segment_cells(a[0], a[1], b[0], b[1])


@dataclass
class MapStack:
    """The per-episode map bundle consumed by rewards, features and planners.

    ``cover_area`` is the cover map dilated by a few cells: cover cells
    themselves are obstacles, so the robot can only ever be next to them.
    """

    height: HeightMap
    cover: CoverMap
    cover_area: CoverMap
    goal: GoalMap
    threat: ThreatMap

    @property
    def spec(self) -> GridSpec:
        return self.height.spec

    def with_threat(self, threat: ThreatMap) -> "MapStack":
        return MapStack(self.height, self.cover, self.cover_area, self.goal, threat)
