"""Grid traversal primitives.

Two flavours of supercover rasterization are provided:

* ``center_ray`` walks between two cell centers using integer arithmetic only,
  so it is exact and symmetric.  Line-of-sight queries use it.
* ``segment_cells`` walks an arbitrary continuous segment (cell units) and is
  used for the cells swept by one robot motion step.

Both include corner touches: when the segment passes exactly through a grid
vertex, the two side cells sharing that vertex are reported as well.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

Cell = tuple[int, int]


def center_ray(i0: int, j0: int, i1: int, j1: int) -> list[Cell]:
    """Supercover of the segment joining the centers of two cells.

    Endpoints are included. Cells are listed in traversal order; the two side
    cells of an exact corner crossing are emitted before the diagonal cell.
    """
    di, dj = i1 - i0, j1 - j0
    ni, nj = abs(di), abs(dj)
    si = 1 if di > 0 else -1
    sj = 1 if dj > 0 else -1
    i, j = i0, j0
    cells = [(i, j)]
    ki = kj = 0
    while ki < ni or kj < nj:
        # compare the parameters of the next vertical vs. horizontal crossing
        decision = (1 + 2 * ki) * nj - (1 + 2 * kj) * ni
        if decision == 0:
            cells.append((i + si, j))
            cells.append((i, j + sj))
            i += si
            j += sj
            ki += 1
            kj += 1
        elif decision < 0:
            i += si
            ki += 1
        else:
            j += sj
            kj += 1
        cells.append((i, j))
    return cells


@lru_cache(maxsize=8192)
def ray_offsets(di: int, dj: int) -> tuple[Cell, ...]:
    """Intermediate cells of a center ray from (0, 0) to (di, dj), endpoints excluded."""
    cells = center_ray(0, 0, di, dj)
    return tuple(c for c in cells if c != (0, 0) and c != (di, dj))


class RayTable:
    """Padded offset table of center rays for every displacement on a W x H grid.

    ``rel_i``/``rel_j`` have shape (2W-1, 2H-1, L); ``valid`` marks real entries.
    """

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        offs = [
            [ray_offsets(di, dj) for dj in range(-(height - 1), height)]
            for di in range(-(width - 1), width)
        ]
        longest = max((len(o) for row in offs for o in row), default=0)
        longest = max(longest, 1)
        shape = (2 * width - 1, 2 * height - 1, longest)
        self.rel_i = np.zeros(shape, dtype=np.int64)
        self.rel_j = np.zeros(shape, dtype=np.int64)
        self.valid = np.zeros(shape, dtype=bool)
        for a, row in enumerate(offs):
            for b, o in enumerate(row):
                if o:
                    arr = np.asarray(o, dtype=np.int64)
                    self.rel_i[a, b, : len(o)] = arr[:, 0]
                    self.rel_j[a, b, : len(o)] = arr[:, 1]
                    self.valid[a, b, : len(o)] = True
        self.length = self.valid.sum(axis=-1)

    def blocked_from(self, blockers: np.ndarray, src: Cell, reach: int | None = None) -> np.ndarray:
        """For every target cell, whether any intermediate ray cell is a blocker.

        ``blockers`` is an (H, W) boolean array; the result has the same shape.
        With ``reach`` set, only targets within that many cells along each axis
        are evaluated and all others are reported blocked.
        """
        h, w = blockers.shape
        si, sj = src
        i0, i1, j0, j1 = 0, w, 0, h
        if reach is not None:
            i0, i1 = max(0, si - reach), min(w, si + reach + 1)
            j0, j1 = max(0, sj - reach), min(h, sj + reach + 1)
        ti, tj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1))
        a = ti - si + (self.width - 1)
        b = tj - sj + (self.height - 1)
        n = max(1, int(self.length[a, b].max()))
        ci = self.rel_i[a, b, :n] + si
        cj = self.rel_j[a, b, :n] + sj
        valid = self.valid[a, b, :n]
        flat = np.where(valid, cj * w + ci, h * w)
        ext = np.append(blockers.ravel(), False)
        out = np.ones((h, w), dtype=bool)
        out[j0:j1, i0:i1] = ext[flat].any(axis=-1)
        return out


@lru_cache(maxsize=16)
def ray_table(width: int, height: int) -> RayTable:
    return RayTable(width, height)


def segment_cells(x0: float, y0: float, x1: float, y1: float) -> list[Cell]:
    """Supercover of a continuous segment given in cell units.

    Cell (i, j) is the half-open square [i, i+1) x [j, j+1). The cell holding
    each endpoint is always included.
    """
    i, j = math.floor(x0), math.floor(y0)
    cells = [(i, j)]
    dx, dy = x1 - x0, y1 - y0
    if dx == 0.0 and dy == 0.0:
        return cells
    si = 1 if dx > 0 else -1
    sj = 1 if dy > 0 else -1
    inf = math.inf
    if dx > 0:
        tmax_x = (i + 1 - x0) / dx
    elif dx < 0:
        tmax_x = (x0 - i) / -dx
    else:
        tmax_x = inf
    if dy > 0:
        tmax_y = (j + 1 - y0) / dy
    elif dy < 0:
        tmax_y = (y0 - j) / -dy
    else:
        tmax_y = inf
    tdx = 1.0 / abs(dx) if dx != 0 else inf
    tdy = 1.0 / abs(dy) if dy != 0 else inf
    while True:
        t = min(tmax_x, tmax_y)
        if t > 1.0:
            break
        if tmax_x == tmax_y:
            cells.append((i + si, j))
            cells.append((i, j + sj))
            i += si
            j += sj
            tmax_x += tdx
            tmax_y += tdy
        elif tmax_x < tmax_y:
            i += si
            tmax_x += tdx
        else:
            j += sj
            tmax_y += tdy
        cells.append((i, j))
    # drop duplicates while keeping order
    return list(dict.fromkeys(cells))
