import math

import numpy as np
import pytest

from covertnav.maps import swept_cells
from covertnav.rl.features import (
    N_STATES,
    StateFeatures,
    bearing_bucket,
    extract_features,
    wrap_angle,
)
from covertnav.rl.rewards import (
    RewardTerms,
    RewardWeights,
    reward_collision,
    reward_cover,
    reward_goal,
    reward_threat,
    score_step,
    total_reward,
)

from util import make_stack


def test_reward_terms_direct():
    st = make_stack(np.zeros((4, 4)), cover=np.full((4, 4), 0.5), threat=np.full((4, 4), 0.25))
    assert reward_cover(st.cover, [(0, 0), (1, 0)], 2.0) == 2.0
    assert reward_threat(st.threat, [(1, 1)], 2.0) == -0.5
    assert reward_goal(5.0, 4.0, 5.0) == 5.0
    with pytest.raises(IndexError):
        reward_cover(st.cover, [(4, 0)])


def test_collision_threshold():
    h = np.zeros((3, 3))
    h[1, 1] = 0.31
    st = make_stack(h)
    assert reward_collision(st.height, [(1, 1)], 0.3, 10.0) == -10.0
    assert reward_collision(st.height, [(0, 0), (2, 2)], 0.3, 10.0) == 0.0
    h[1, 1] = 0.3
    assert reward_collision(make_stack(h).height, [(1, 1)], 0.3, 10.0) == 0.0


def test_total_is_sum():
    t = RewardTerms(1.5, -0.25, 2.0, -10.0)
    assert total_reward(t) == t.total == 1.5 - 0.25 + 2.0 - 10.0


def test_score_step_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        h = np.where(rng.random((10, 10)) < 0.15, 1.0, 0.0)
        cov = rng.random((10, 10))
        thr = rng.random((10, 10))
        st = make_stack(h, cov, thr)
        p0 = tuple(rng.uniform(0.5, 9.5, 2))
        p1 = tuple(np.clip(np.array(p0) + rng.normal(0, 0.4, 2), 0.01, 9.99))
        goal = (8.5, 8.5)
        w = RewardWeights()
        terms = score_step(st, p0, p1, goal, w)
        cells = swept_cells(st.spec, p0, p1)
        here = (math.floor(p0[0]), math.floor(p0[1]))
        assert terms.cover == pytest.approx(w.cover * sum(st.cover_area.values[j, i] for i, j in cells))
        assert terms.threat == -w.threat * thr[here[1], here[0]]
        assert terms.goal == pytest.approx(w.goal * (math.dist(p0, goal) - math.dist(p1, goal)))
        blocked = any(h[j, i] > 0.3 for i, j in cells)
        assert terms.collision == (-w.collision if blocked else 0.0)


def test_stationary_step_earns_no_cover():
    st = make_stack(np.zeros((4, 4)), cover=np.ones((4, 4)))
    t = score_step(st, (1.5, 1.5), (1.5, 1.5), (3.5, 3.5))
    assert t.cover == 0.0 and t.goal == 0.0


def test_score_step_custom_distance():
    st = make_stack(np.zeros((4, 4)))
    t = score_step(st, (0.5, 0.5), (1.5, 0.5), (3.5, 3.5), distance=lambda p: 10 - p[0])
    assert t.goal == pytest.approx(5.0)


def test_score_step_off_grid():
    st = make_stack(np.zeros((4, 4)))
    with pytest.raises(IndexError):
        score_step(st, (-1.0, 0.5), (0.5, 0.5), (3.5, 3.5))


# --- features -------------------------------------------------------------------

def test_state_index_round_trip():
    for idx in range(N_STATES):
        s = StateFeatures.from_index(idx)
        assert s.index == idx
        assert StateFeatures.from_key(s.key) == s
    with pytest.raises(ValueError):
        StateFeatures(9, 0, False, 0, 0)


def test_wrap_and_bearing():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert bearing_bucket(0.0) == 0
    assert bearing_bucket(math.pi / 2) == 2
    assert bearing_bucket(-math.pi / 2) == 6
    assert bearing_bucket(math.pi) == 4
    assert bearing_bucket(math.pi / 8 - 1e-9) == 0


def test_extract_features_values():
    h = np.zeros((9, 9))
    h[4, 5] = 1.0
    cov = np.zeros((9, 9))
    cov[3, 3] = 1.0
    thr = np.zeros((9, 9))
    thr[4, 4] = 2.0
    thr[0, 0] = 4.0
    st = make_stack(h, cov, thr, radius=0)
    f = extract_features(st, (4.5, 4.5, 0.0), (4.5, 8.5), (5.5, 4.5))
    assert f.cover_bucket == 1  # 1/9 of the window
    assert f.threat_bucket == 1  # (2/9)/4 = 0.056
    assert f.height_block
    assert f.goal_dist_bucket == 3  # 4 m
    assert f.goal_bearing_bucket == 0
    with pytest.raises(ValueError):
        extract_features(st, (-1.0, 0.0, 0.0), (1, 1), (1, 1))
