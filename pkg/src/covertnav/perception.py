"""Point cloud segmentation and cover-object identification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .worldgen import PointCloud

GROUND_BAND = 0.15


@dataclass(frozen=True)
class CoverThresholds:
    h_min: float = 0.5
    d_min: float = 5.0
    v_min: float = 0.1


@dataclass(frozen=True)
class Cluster:
    point_indices: tuple[int, ...]
    bbox: tuple[float, float, float, float, float, float]

    def __post_init__(self):
        if not self.point_indices:
            raise ValueError("a cluster must contain at least one point")

    def __len__(self) -> int:
        return len(self.point_indices)


@dataclass(frozen=True)
class ClusterStats:
    height: float
    density: float
    volume: float
    is_cover: bool


def _bbox(pts: np.ndarray) -> tuple[float, float, float, float, float, float]:
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]), float(lo[2]), float(hi[2]))


def _neighbor_pairs(pts: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """All index pairs (a < b) closer than ``radius``, found via a uniform hash grid."""
    keys = np.floor(pts / radius).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    boundaries = np.flatnonzero(np.any(np.diff(sk, axis=0) != 0, axis=1)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(sk)]])
    buckets = {tuple(sk[s]): order[s:e] for s, e in zip(starts, ends)}

    # half of the 26-neighbourhood plus the cell itself, so each pair is seen once
    half = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ]
    r2 = radius * radius
    rows, cols = [], []
    for key, idx in buckets.items():
        a = pts[idx]
        d2 = ((a[:, None, :] - a[None, :, :]) ** 2).sum(-1)
        ii, jj = np.nonzero(np.triu(d2 <= r2, k=1))
        rows.append(idx[ii])
        cols.append(idx[jj])
        kx, ky, kz = key
        for dx, dy, dz in half:
            other = buckets.get((kx + dx, ky + dy, kz + dz))
            if other is None:
                continue
            b = pts[other]
            d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
            ii, jj = np.nonzero(d2 <= r2)
            rows.append(idx[ii])
            cols.append(other[jj])
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(rows), np.concatenate(cols)


def euclidean_cluster(
    cloud: PointCloud,
    link_radius: float = 0.75,
    min_points: int = 5,
    ground_band: float = GROUND_BAND,
) -> list[Cluster]:
    """Single-linkage clusters of the non-ground points.

    Points with z below ``ground_band`` are dropped first. Clusters are ordered
    by their smallest point index.
    """
    if not link_radius > 0:
        raise ValueError("link_radius must be positive")
    if min_points < 1:
        raise ValueError("min_points must be >= 1")
    pts = cloud.as_array()
    if len(pts) == 0:
        return []
    keep = np.flatnonzero(pts[:, 2] >= ground_band)
    if keep.size == 0:
        return []
    sub = pts[keep]
    a, b = _neighbor_pairs(sub, link_radius)
    n = len(sub)
    graph = coo_matrix((np.ones(len(a), dtype=np.int8), (a, b)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    cuts = np.flatnonzero(np.diff(sorted_labels)) + 1
    groups = np.split(order, cuts)
    clusters = []
    for g in groups:
        if len(g) < min_points:
            continue
        idx = keep[np.sort(g)]
        clusters.append(Cluster(tuple(int(k) for k in idx), _bbox(pts[idx])))
    clusters.sort(key=lambda c: c.point_indices[0])
    return clusters


def cluster_stats(
    cloud: PointCloud,
    cluster: Cluster,
    thresholds: CoverThresholds = CoverThresholds(),
) -> ClusterStats:
    """Height, density and bounding volume of a cluster, and whether it is cover.

    A zero-volume cluster gets density ``inf``; it can never be cover because
    its volume fails ``v_min``.
    """
    pts = cloud.as_array()[list(cluster.point_indices)]
    x0, x1, y0, y1, z0, z1 = _bbox(pts)
    h = z1 - z0
    v = (x1 - x0) * (y1 - y0) * h
    d = len(pts) / v if v > 0 else math.inf
    is_cover = h >= thresholds.h_min and d >= thresholds.d_min and v >= thresholds.v_min
    return ClusterStats(h, d, v, bool(is_cover and v > 0))


def cover_points(
    cloud: PointCloud, clusters: Sequence[Cluster], stats: Sequence[ClusterStats]
) -> set[int]:
    if len(clusters) != len(stats):
        raise ValueError("stats must align with clusters")
    out: set[int] = set()
    for c, s in zip(clusters, stats):
        if s.is_cover:
            out.update(c.point_indices)
    return out


def identify_cover(
    cloud: PointCloud,
    link_radius: float = 0.75,
    min_points: int = 5,
    thresholds: CoverThresholds = CoverThresholds(),
    ground_band: float = GROUND_BAND,
) -> tuple[list[Cluster], list[ClusterStats], set[int]]:
    clusters = euclidean_cluster(cloud, link_radius, min_points, ground_band)
    stats = [cluster_stats(cloud, c, thresholds) for c in clusters]
    return clusters, stats, cover_points(cloud, clusters, stats)


def label_text(cloud: PointCloud, clusters: Sequence[Cluster]) -> str:
    """``x y z label`` lines; unclustered points get label -1."""
    labels = np.full(len(cloud), -1, dtype=np.int64)
    for k, c in enumerate(clusters):
        labels[list(c.point_indices)] = k
    return "".join(
        f"{x!r} {y!r} {z!r} {lab}\n" for (x, y, z), lab in zip(cloud.as_array().tolist(), labels)
    )
