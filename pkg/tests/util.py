"""Small builders shared by the tests."""

import numpy as np

from covertnav.maps import CoverMap, GridSpec, HeightMap, MapStack, ThreatMap, build_goal_map, dilate


def make_stack(height, cover=None, threat=None, goal=None, radius=1):
    height = np.asarray(height, dtype=float)
    h, w = height.shape
    spec = GridSpec(w, h)
    cover = np.zeros_like(height) if cover is None else np.asarray(cover, dtype=float)
    threat = np.zeros_like(height) if threat is None else np.asarray(threat, dtype=float)
    goal = goal if goal is not None else spec.center((w - 1, h - 1))
    return MapStack(
        HeightMap(spec, height),
        CoverMap(spec, cover),
        CoverMap(spec, dilate(cover, radius)),
        build_goal_map(spec, goal),
        ThreatMap(spec, threat),
    )
