"""Adaptive threat-aware visibility estimation.

Pipeline per planning cycle:

1. Bayesian update of a categorical threat belief over grid cells.
2. Top-K vantage cells by belief mass (max-priority order, row-major tie-break).
3. Multi-perspective threat ``tau``: best visibility-weighted vantage probability,
   restricted to cells inside the robot's assessment range.
4. Temporal prediction ``rho``: discounted max of ``tau`` along the planned path.
5. Cover-aware threat ``phi = rho * (1 - cover) * goal_distance``.

Visibility is binary line of sight over the height map; see ``line_of_sight``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .maps import CoverMap, GoalMap, GridSpec, HeightMap, ThreatMap
from .raster import ray_offsets, ray_table

Cell = tuple[int, int]


class DegenerateEvidence(ValueError):
    """Observation likelihoods leave no belief mass; the prior should be kept."""

    def __init__(self, prior: "ThreatBelief"):
        super().__init__("observation leaves zero posterior mass")
        self.prior = prior


@dataclass(frozen=True)
class AtaveParams:
    eye_height: float = 1.0  # threat sensor height, m
    max_range: float = 10.0  # threat visibility range, m
    assess_range: float = 15.0  # robot-centred assessment radius, m
    k: int = 16
    mass_floor: float = 1e-3
    gamma: float = 0.95
    p_detect: float = 0.9
    p_false_alarm: float = 0.02
    sensor_range: float = 15.0
    sensor_height: float = 0.8


@dataclass
class ThreatBelief:
    spec: GridSpec
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != self.spec.shape:
            raise ValueError("belief shape does not match grid")
        if np.any(self.probs < 0):
            raise ValueError("belief probabilities must be non-negative")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"belief must sum to 1, sums to {self.probs.sum()!r}")

    def __getitem__(self, cell: Cell) -> float:
        return float(self.probs[cell[1], cell[0]])

    @classmethod
    def uniform(cls, spec: GridSpec) -> "ThreatBelief":
        return cls(spec, np.full(spec.shape, 1.0 / (spec.width * spec.height)))


def intel_prior(
    spec: GridSpec,
    suspected: Sequence[Cell],
    weight: float = 0.8,
    sigma_cells: float = 2.0,
) -> ThreatBelief:
    """Uniform floor mixed with Gaussian bumps around suspected threat cells."""
    n = spec.width * spec.height
    probs = np.full(spec.shape, (1.0 - weight) / n if suspected else 1.0 / n)
    if suspected:
        jj, ii = np.mgrid[0 : spec.height, 0 : spec.width]
        bumps = np.zeros(spec.shape)
        for ci, cj in suspected:
            bumps += np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * sigma_cells**2))
        probs += weight * bumps / bumps.sum()
    return ThreatBelief(spec, probs / probs.sum())


def belief_update(prior: ThreatBelief, likelihood: np.ndarray) -> ThreatBelief:
    """Posterior proportional to prior times per-cell observation likelihood."""
    likelihood = np.asarray(likelihood, dtype=float)
    if likelihood.shape != prior.probs.shape:
        raise ValueError("likelihood shape does not match belief")
    if np.any(likelihood < 0):
        raise ValueError("likelihoods must be non-negative")
    num = prior.probs * likelihood
    total = num.sum()
    if not total > 0:
        raise DegenerateEvidence(prior)
    return ThreatBelief(prior.spec, num / total)


def observation_likelihood(
    height: HeightMap,
    robot: Cell,
    threat_cells: Sequence[Cell],
    rng: np.random.Generator,
    params: AtaveParams = AtaveParams(),
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one scan and return (likelihood ratio grid, detection mask).

    Cells inside sensor range with line of sight from the robot are scanned.
    A scanned cell holding a threat reports a detection with probability
    ``p_detect``; an empty one with ``p_false_alarm``. Likelihoods are the
    ratios against the no-threat hypothesis: ``pd/pfa`` for a detection,
    ``(1-pd)/(1-pfa)`` for a silent scan, 1 for unscanned cells.
    """
    scanned = visible_from(height, robot, params.sensor_height, params.sensor_range)
    truth = np.zeros(height.spec.shape, dtype=bool)
    for ci, cj in threat_cells:
        truth[cj, ci] = True
    draws = rng.random(height.spec.shape)
    detected = scanned & np.where(truth, draws < params.p_detect, draws < params.p_false_alarm)
    lik = np.ones(height.spec.shape)
    lik[scanned] = (1.0 - params.p_detect) / (1.0 - params.p_false_alarm)
    lik[detected] = params.p_detect / params.p_false_alarm
    return lik, detected


# --- line of sight --------------------------------------------------------------

def _cell_distance(spec: GridSpec, a: Cell, b: Cell) -> float:
    di, dj = a[0] - b[0], a[1] - b[1]
    return math.sqrt(di * di + dj * dj) * spec.cell_size


def line_of_sight(
    height: HeightMap, src: Cell, dst: Cell, eye_height: float, max_range: float
) -> bool:
    """Binary visibility between two cell centres.

    Visible iff the centres are within ``max_range`` and no intermediate cell of
    the supercover ray has height >= ``eye_height``. Endpoints never block.
    """
    spec = height.spec
    if not (spec.contains(src) and spec.contains(dst)):
        raise IndexError(f"cells {src}, {dst} must lie on the grid")
    if _cell_distance(spec, src, dst) > max_range:
        return False
    h = height.values
    si, sj = src
    for di, dj in ray_offsets(dst[0] - si, dst[1] - sj):
        if h[sj + dj, si + di] >= eye_height:
            return False
    return True


def in_range_mask(spec: GridSpec, src: Cell, max_range: float) -> np.ndarray:
    jj, ii = np.mgrid[0 : spec.height, 0 : spec.width]
    di, dj = ii - src[0], jj - src[1]
    d = np.sqrt((di * di + dj * dj).astype(float)) * spec.cell_size
    return d <= max_range


def visible_from(height: HeightMap, src: Cell, eye_height: float, max_range: float) -> np.ndarray:
    """``line_of_sight(src, c)`` for every cell c at once, as an (H, W) bool array."""
    spec = height.spec
    table = ray_table(spec.width, spec.height)
    reach = None
    if math.isfinite(max_range):
        reach = int(math.floor(max_range / spec.cell_size))
    blocked = table.blocked_from(height.values >= eye_height, src, reach)
    return ~blocked & in_range_mask(spec, src, max_range)


# --- vantage set and threat terms ---------------------------------------------

@dataclass(frozen=True)
class VantageSet:
    cells: tuple[tuple[Cell, float], ...]
    capacity: int

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)


def build_vantage_set(belief: ThreatBelief, k: int = 16, mass_floor: float = 1e-3) -> VantageSet:
    """Top-``k`` belief cells with mass >= ``mass_floor``, highest first.

    Ties resolve by row-major cell index (row = j). Selection goes through a
    bounded heap so only ``k`` entries are kept.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    flat = belief.probs.ravel()
    w = belief.spec.width
    candidates = np.flatnonzero(flat >= mass_floor)
    best = heapq.nsmallest(k, ((-flat[n], int(n)) for n in candidates))
    cells = tuple(((n % w, n // w), -neg) for neg, n in best)
    return VantageSet(tuple((c, float(p)) for c, p in cells), k)


def _in_assessment(spec: GridSpec, cell: Cell, robot: Cell, params: AtaveParams) -> bool:
    return _cell_distance(spec, cell, robot) <= params.assess_range


def multi_perspective_threat(
    cell: Cell,
    robot: Cell,
    vantages: VantageSet,
    height: HeightMap,
    params: AtaveParams = AtaveParams(),
) -> float:
    """Max over vantages of visibility(vantage -> cell) * vantage probability.

    Cells outside the robot's assessment range score 0.
    """
    if not _in_assessment(height.spec, cell, robot, params):
        return 0.0
    best = 0.0
    for v, p in vantages:
        if p <= best:
            break  # descending order: nothing later can win
        if line_of_sight(height, v, cell, params.eye_height, params.max_range):
            best = p
    return best


def temporal_visibility(
    cell: Cell,
    trajectory: Sequence[Cell],
    vantages: VantageSet,
    height: HeightMap,
    gamma: float | None = None,
    params: AtaveParams = AtaveParams(),
) -> float:
    """Discounted max of the multi-perspective threat over trajectory positions."""
    if not trajectory:
        raise ValueError("trajectory must be non-empty")
    g = params.gamma if gamma is None else gamma
    best = 0.0
    for k, r in enumerate(trajectory):
        val = multi_perspective_threat(cell, r, vantages, height, params) * g**k
        if val > best:
            best = val
    return best


def phi(rho, cover, goal_distance):
    """Cover-aware threat from its three factors (scalars or arrays)."""
    return rho * (1.0 - cover) * goal_distance


def cover_aware_threat(
    cell: Cell,
    trajectory: Sequence[Cell],
    cover: CoverMap,
    goal: GoalMap,
    vantages: VantageSet,
    height: HeightMap,
    params: AtaveParams = AtaveParams(),
) -> float:
    rho = temporal_visibility(cell, trajectory, vantages, height, params.gamma, params)
    return phi(rho, cover[cell], goal[cell])


def trajectory_discount(spec: GridSpec, trajectory: Sequence[Cell], params: AtaveParams) -> np.ndarray:
    """Per cell, max over k of gamma**k for trajectory points within assessment range."""
    out = np.zeros(spec.shape)
    for k, r in enumerate(trajectory):
        near = in_range_mask(spec, r, params.assess_range)
        np.maximum(out, np.where(near, params.gamma**k, 0.0), out=out)
    return out


def tau_field(vantages: VantageSet, height: HeightMap, params: AtaveParams) -> np.ndarray:
    """Range-free multi-perspective threat for every cell."""
    tau = np.zeros(height.spec.shape)
    for v, p in vantages:
        vis = visible_from(height, v, params.eye_height, params.max_range)
        np.maximum(tau, np.where(vis, p, 0.0), out=tau)
    return tau


def threat_field(
    trajectory: Sequence[Cell],
    belief: ThreatBelief,
    height: HeightMap,
    cover: CoverMap,
    goal: GoalMap,
    params: AtaveParams = AtaveParams(),
) -> ThreatMap:
    """Cover-aware threat for the whole grid given the planned trajectory."""
    if not trajectory:
        raise ValueError("trajectory must be non-empty")
    spec = height.spec
    if not (cover.spec == spec == goal.spec == belief.spec):
        raise ValueError("maps and belief must share one grid")
    vantages = build_vantage_set(belief, params.k, params.mass_floor)
    rho = tau_field(vantages, height, params) * trajectory_discount(spec, trajectory, params)
    return ThreatMap(spec, phi(rho, cover.values, goal.distance))
