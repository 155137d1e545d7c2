import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covertnav.perception import (
    Cluster,
    CoverThresholds,
    cluster_stats,
    cover_points,
    euclidean_cluster,
    identify_cover,
    label_text,
)
from covertnav.worldgen import PointCloud, generate_world, sample_point_cloud


def brute_clusters(pts, radius, min_points, band):
    """Union-find over all pairs."""
    keep = [k for k in range(len(pts)) if pts[k][2] >= band]
    parent = {k: k for k in keep}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for x in range(len(keep)):
        for y in range(x + 1, len(keep)):
            a, b = keep[x], keep[y]
            if math.dist(pts[a], pts[b]) <= radius:
                parent[find(a)] = find(b)
    groups = {}
    for k in keep:
        groups.setdefault(find(k), []).append(k)
    return sorted(tuple(sorted(g)) for g in groups.values() if len(g) >= min_points)


def test_two_close_points_one_cluster():
    c = PointCloud(np.array([[0, 0, 1.0], [0.1, 0, 1.0]]))
    assert [cl.point_indices for cl in euclidean_cluster(c, 0.5, 1)] == [(0, 1)]


def test_two_far_points():
    c = PointCloud(np.array([[0, 0, 1.0], [10, 0, 1.0]]))
    assert len(euclidean_cluster(c, 0.5, 1)) == 2
    assert euclidean_cluster(c, 0.5, 2) == []


def test_ground_band_excludes_points():
    c = PointCloud(np.array([[0, 0, 0.0], [0.1, 0, 0.05], [0.2, 0, 1.0]]))
    assert [cl.point_indices for cl in euclidean_cluster(c, 0.5, 1)] == [(2,)]


@pytest.mark.parametrize("seed", range(15))
def test_clusters_match_union_find(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 250))
    # clumpy points so chains form
    centers = rng.uniform(0, 6, (5, 3))
    pts = centers[rng.integers(0, 5, n)] + rng.normal(0, 0.6, (n, 3))
    radius = float(rng.uniform(0.2, 1.0))
    got = sorted(cl.point_indices for cl in euclidean_cluster(PointCloud(pts), radius, 2, 0.15))
    assert got == brute_clusters(pts.tolist(), radius, 2, 0.15)


def test_clusters_partition_non_ground():
    w = generate_world("mixed", (20, 20), 3)
    c = sample_point_cloud(w, seed=3)
    clusters = euclidean_cluster(c, 0.75, 1)
    seen = [k for cl in clusters for k in cl.point_indices]
    assert len(seen) == len(set(seen))
    assert set(seen) == set(np.flatnonzero(c.points[:, 2] >= 0.15).tolist())


def naive_stats(pts, th):
    xs, ys, zs = zip(*pts)
    h = max(zs) - min(zs)
    v = (max(xs) - min(xs)) * (max(ys) - min(ys)) * h
    d = len(pts) / v if v > 0 else math.inf
    return h, d, v, (h >= th.h_min and d >= th.d_min and v >= th.v_min and v > 0)


def test_stats_match_naive_formulas():
    rng = np.random.default_rng(11)
    th = CoverThresholds()
    for _ in range(100):
        n = int(rng.integers(1, 60))
        pts = rng.uniform(0, 1, (n, 3)) * rng.uniform(0.1, 3, 3)
        c = PointCloud(pts)
        s = cluster_stats(c, Cluster(tuple(range(n)), (0,) * 6), th)
        h, d, v, cov = naive_stats(pts.tolist(), th)
        assert s.height == pytest.approx(h, rel=1e-12)
        assert s.volume == pytest.approx(v, rel=1e-12)
        assert (math.isinf(s.density) and math.isinf(d)) or s.density == pytest.approx(d, rel=1e-12)
        assert s.is_cover == cov


def test_degenerate_cluster_is_not_cover():
    pts = np.array([[0, 0, 0.0], [0, 0, 1.0], [0, 0, 2.0]])
    s = cluster_stats(PointCloud(pts), Cluster((0, 1, 2), (0,) * 6))
    assert s.volume == 0 and math.isinf(s.density) and not s.is_cover


@given(st.randoms(use_true_random=False))
@settings(max_examples=30, deadline=None)
def test_stats_permutation_invariant(rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    pts = rng.uniform(0, 2, (30, 3))
    perm = rng.permutation(30)
    a = cluster_stats(PointCloud(pts), Cluster(tuple(range(30)), (0,) * 6))
    b = cluster_stats(PointCloud(pts[perm]), Cluster(tuple(range(30)), (0,) * 6))
    assert a == b


def test_cover_points_cases():
    c = PointCloud(np.zeros((4, 3)))
    cl = [Cluster((0, 1), (0,) * 6), Cluster((2, 3), (0,) * 6)]
    from covertnav.perception import ClusterStats

    no = ClusterStats(1, 1, 1, False)
    yes = ClusterStats(1, 1, 1, True)
    assert cover_points(c, cl, [no, no]) == set()
    assert cover_points(c, cl, [yes, yes]) == {0, 1, 2, 3}
    assert cover_points(c, cl, [yes, no]) == {0, 1}
    with pytest.raises(ValueError):
        cover_points(c, cl, [yes])


def test_identify_cover_matches_ground_truth():
    w = generate_world("mixed", (30, 30), 5)
    c = sample_point_cloud(w, seed=5)
    _, _, cover = identify_cover(c)
    th = CoverThresholds()
    truth = set()
    for k, o in enumerate(w.objects):
        if o.height >= th.h_min:
            truth.update(np.flatnonzero((c.source == k) & (c.points[:, 2] >= 0.15)).tolist())
    agree = len(cover & truth) / max(1, len(cover | truth))
    assert agree > 0.95


def test_label_text_format():
    c = PointCloud(np.array([[0, 0, 1.0], [5, 5, 1.0]]))
    lines = label_text(c, euclidean_cluster(c, 0.5, 1)).splitlines()
    assert [ln.split()[-1] for ln in lines] == ["0", "1"]
