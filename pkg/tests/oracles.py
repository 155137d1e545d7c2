"""Brute-force reference implementations used by the tests.

Each oracle is written from the defining formula with plain loops and shares
no code with the package.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


# --- line of sight ------------------------------------------------------------------

def ray_cells_by_sampling(src, dst, min_samples: int = 1000) -> set:
    """Cells whose closed square contains a sample of the centre-to-centre segment.

    Samples sit at t = k / M with M >= min_samples a multiple of 2*|di|*|dj|, so
    every crossing of a grid line (and every vertex crossing) is sampled exactly.
    Coordinates are kept as integers scaled by 2M to make containment exact.
    """
    (i0, j0), (i1, j1) = src, dst
    di, dj = i1 - i0, j1 - j0
    base = 2 * max(abs(di), 1) * max(abs(dj), 1)
    m = base * math.ceil(min_samples / base)
    scale = 2 * m
    cells = set()
    for k in range(m + 1):
        # position in cell units times 2M; cell centre i sits at (2i + 1) * M
        x = (2 * i0 + 1) * m + 2 * k * di
        y = (2 * j0 + 1) * m + 2 * k * dj
        xs = [x // scale] + ([x // scale - 1] if x % scale == 0 else [])
        ys = [y // scale] + ([y // scale - 1] if y % scale == 0 else [])
        for a in xs:
            for b in ys:
                cells.add((a, b))
    return cells


def los_oracle(height: np.ndarray, src, dst, eye_height: float, max_range: float, cell_size: float = 1.0) -> bool:
    d = math.hypot(dst[0] - src[0], dst[1] - src[1]) * cell_size
    if d > max_range:
        return False
    for c in ray_cells_by_sampling(src, dst):
        if c == tuple(src) or c == tuple(dst):
            continue
        if height[c[1], c[0]] >= eye_height:
            return False
    return True


# --- belief --------------------------------------------------------------------------

def posterior_oracle(prior: np.ndarray, lik: np.ndarray) -> np.ndarray:
    num = [[prior[j][i] * lik[j][i] for i in range(prior.shape[1])] for j in range(prior.shape[0])]
    den = math.fsum(v for row in num for v in row)
    return np.array([[v / den for v in row] for row in num])


# --- maps ----------------------------------------------------------------------------

def cell_of(x, y, x_min, y_min, size):
    return math.floor((x - x_min) / size), math.floor((y - y_min) / size)


def cover_map_oracle(points, cover_idx, width, height, size=1.0, x_min=0.0, y_min=0.0) -> np.ndarray:
    total = defaultdict(int)
    cov = defaultdict(int)
    cover_idx = set(cover_idx)
    for n, (x, y, _z) in enumerate(points):
        c = cell_of(x, y, x_min, y_min, size)
        if 0 <= c[0] < width and 0 <= c[1] < height:
            total[c] += 1
            if n in cover_idx:
                cov[c] += 1
    out = np.zeros((height, width))
    for (i, j), t in total.items():
        out[j, i] = cov[(i, j)] / t
    return out


def height_map_oracle(points, width, height, size=1.0, x_min=0.0, y_min=0.0, fill=0.0) -> np.ndarray:
    best = {}
    for x, y, z in points:
        c = cell_of(x, y, x_min, y_min, size)
        if 0 <= c[0] < width and 0 <= c[1] < height:
            best[c] = max(best.get(c, -math.inf), z)
    out = np.full((height, width), fill, dtype=float)
    for (i, j), z in best.items():
        out[j, i] = z
    return out


def goal_map_oracle(width, height, goal, size=1.0, x_min=0.0, y_min=0.0):
    d = np.zeros((height, width))
    a = np.zeros((height, width))
    for j in range(height):
        for i in range(width):
            x = x_min + (i + 0.5) * size
            y = y_min + (j + 0.5) * size
            dx, dy = x - goal[0], y - goal[1]
            d[j, i] = math.sqrt(dx * dx + dy * dy)  # products, not pow(), for exact rounding
            a[j, i] = math.atan2(y - goal[1], x - goal[0])
    peak = max(d.ravel())
    if peak > 0:
        d = d / peak
    return d, a


# --- tabular RL ----------------------------------------------------------------------

def value_iteration(n_states, n_actions, transition, gamma, tol=1e-13):
    """``transition(s, a) -> (reward, next_state, terminal)``; returns Q*."""
    q = np.zeros((n_states, n_actions))
    while True:
        new = np.zeros_like(q)
        for s in range(n_states):
            for a in range(n_actions):
                r, s2, done = transition(s, a)
                new[s, a] = r + (0.0 if done else gamma * q[s2].max())
        if np.abs(new - q).max() < tol:
            return new
        q = new


# --- episode metrics -----------------------------------------------------------------

def replay_oracle(rows, dt):
    """Metrics accumulated from trace rows in a single pass."""
    n = 0
    seen = cover = 0
    length = 0.0
    for r in rows:
        n += 1
        seen += 1 if r["detected"] else 0
        cover += 1 if r["in_cover"] else 0
        (x0, y0, _), (x1, y1, _) = r["prev"], r["pose"]
        length += math.hypot(x1 - x0, y1 - y0)
    end = rows[-1]["termination"] if rows else "goal"
    return {
        "success": end == "goal",
        "navigation_time": n * dt,
        "trajectory_length": length,
        "threat_exposure": seen / n if n else 0.0,
        "cover_utilization": cover / n if n else 0.0,
        "termination": end,
        "steps": n,
    }
