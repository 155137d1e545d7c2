import heapq
import math

import numpy as np
import pytest

from covertnav.atave import line_of_sight
from covertnav.maps import GridSpec, HeightMap, swept_cells
from covertnav.rl.actions import ACTIONS, N_ACTIONS, STOP
from covertnav.rl.cql import QFunction
from covertnav.sim.agents import ThreatAgent, detect
from covertnav.sim.controllers import Follower, GreedyQ, Observation
from covertnav.sim.episode import (
    EpisodeMetrics,
    SimParams,
    read_trace,
    replay_metrics,
    run_episode,
    timeout_steps,
    write_trace,
)
from covertnav.sim.kinematics import RobotState, feasible_actions, modulate_velocity, obstacle_density, step
from covertnav.sim.planning import NoPath, Route, astar, lookahead_point, path_length
from covertnav.sim.scenario import InfeasibleScenario, build_scenario, custom_scenario, free_mask

from oracles import los_oracle, replay_oracle
from util import make_stack


# --- kinematics -----------------------------------------------------------------

def test_step_examples():
    r = RobotState(1.0, 2.0, 0.3, 5.0)
    s = step(r, (0.0, 0.0), 0.2)
    assert s.pose == r.pose and s.time == pytest.approx(5.2)
    assert step(RobotState(0, 0, 0), (1.0, 0.0), 1.0).x == 1.0
    assert step(RobotState(0, 0, 0.4), (0.0, math.pi), 2.0).heading == pytest.approx(0.4)
    with pytest.raises(ValueError):
        step(r, (1.0, 0.0), 0.0)


def test_modulate_velocity():
    assert modulate_velocity((2.0, 1.5), 0.0, 0.0) == (2.0, 1.5)
    assert modulate_velocity((1.0, 1.0), 1.0, 0.0)[0] == pytest.approx(0.3)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = tuple(ACTIONS[rng.integers(N_ACTIONS)])
        t1, t2 = sorted(rng.random(2))
        d1, d2 = sorted(rng.random(2))
        lo = modulate_velocity(a, t2, d2)
        hi = modulate_velocity(a, t1, d1)
        assert 0 <= lo[0] <= hi[0] <= 2.0
        assert abs(lo[1]) <= abs(hi[1]) <= 1.5
    with pytest.raises(ValueError):
        modulate_velocity((1, 0), 1.5, 0)


def test_obstacle_density():
    h = np.zeros((3, 3))
    h[0, 0] = h[2, 2] = 1.0
    assert obstacle_density(HeightMap(GridSpec(3, 3), h), (1, 1), 0.3) == 0.25
    assert obstacle_density(HeightMap(GridSpec(3, 3), h), (0, 2), 0.3) == 5 / 8


def test_feasible_open_field_and_wall():
    open_ = HeightMap(GridSpec(20, 20), np.zeros((20, 20)))
    assert feasible_actions(RobotState(10.5, 10.5, 0.0), open_, 0.3, 0.2).all()
    h = np.zeros((20, 20))
    h[:, 11] = 1.0
    mask = feasible_actions(RobotState(10.7, 10.5, 0.0), HeightMap(GridSpec(20, 20), h), 0.3, 0.2)
    assert not mask[ACTIONS[:, 0] == 2.0].any()
    assert mask[STOP]


def test_feasible_matches_simulation_oracle():
    rng = np.random.default_rng(1)
    for _ in range(40):
        h = np.where(rng.random((12, 12)) < 0.3, 1.0, 0.0)
        hm = HeightMap(GridSpec(12, 12), h)
        r = RobotState(*rng.uniform(0.2, 11.8, 2), rng.uniform(-math.pi, math.pi))
        mask = feasible_actions(r, hm, 0.3, 0.2)
        for a in range(N_ACTIONS):
            nxt = step(r, tuple(ACTIONS[a]), 0.2)
            cells = swept_cells(hm.spec, r.xy, nxt.xy)
            ok = all(0 <= i < 12 and 0 <= j < 12 and h[j, i] <= 0.3 for i, j in cells)
            assert mask[a] == (ok or a == STOP)


# --- planning -------------------------------------------------------------------

def dijkstra_cost(cost, blocked, start, goal):
    h, w = blocked.shape
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, (i, j) = heapq.heappop(heap)
        if (i, j) == goal:
            return d
        if d > dist[(i, j)]:
            continue
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                ni, nj = i + di, j + dj
                if not (0 <= ni < w and 0 <= nj < h) or blocked[nj][ni]:
                    continue
                if di and dj and (blocked[j][ni] or blocked[nj][i]):
                    continue
                nd = d + (math.sqrt(2) if di and dj else 1.0) * cost[nj][ni]
                if nd < dist.get((ni, nj), math.inf):
                    dist[(ni, nj)] = nd
                    heapq.heappush(heap, (nd, (ni, nj)))
    return math.inf


def path_cost(path, cost):
    return sum((math.sqrt(2) if a[0] != b[0] and a[1] != b[1] else 1.0) * cost[b[1], b[0]] for a, b in zip(path, path[1:]))


@pytest.mark.parametrize("seed", range(25))
def test_astar_optimal_against_dijkstra(seed):
    rng = np.random.default_rng(seed)
    blocked = rng.random((15, 15)) < 0.25
    cost = rng.uniform(0.1, 3.0, (15, 15))
    s = (0, 0)
    g = (14, 14)
    blocked[0, 0] = blocked[14, 14] = False
    ref = dijkstra_cost(cost, blocked, s, g)
    if math.isinf(ref):
        with pytest.raises(NoPath):
            astar(cost, blocked, s, g)
        return
    path = astar(cost, blocked, s, g)
    assert path[0] == s and path[-1] == g
    assert path_cost(path, cost) == pytest.approx(ref, rel=1e-12)
    for a, b in zip(path, path[1:]):
        assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
        assert not blocked[b[1], b[0]]


def test_astar_blocked_goal():
    b = np.zeros((3, 3), dtype=bool)
    b[2, 2] = True
    with pytest.raises(NoPath):
        astar(np.ones((3, 3)), b, (0, 0), (2, 2))


def test_path_length_and_route():
    assert path_length([(0, 0), (1, 1), (1, 2)]) == pytest.approx(1 + math.sqrt(2))
    r = Route([(0, 0), (3, 0), (3, 4)])
    assert r.distance((3, 0)) == pytest.approx(4.0)
    assert r.distance((0, 0)) == pytest.approx(7.0)
    assert r.distance((3, 4)) == 0.0


def test_lookahead_respects_clear():
    path = [(k, 0) for k in range(10)]
    centers = GridSpec(10, 1).center
    assert lookahead_point(path, (0.5, 0.5), centers, 2.0) == (2.5, 0.5)
    assert lookahead_point(path, (0.5, 0.5), centers, 2.0, lambda p, q: q[0] < 2) == (1.5, 0.5)


def test_free_mask_clearance():
    h = np.zeros((5, 5))
    h[2, 2] = 1.0
    m = free_mask(HeightMap(GridSpec(5, 5), h), 0.3, 1)
    assert not m[1:4, 1:4].any()
    assert not m[0].any() and not m[:, 0].any()


# --- agents ---------------------------------------------------------------------

def test_detection_cases_and_oracle():
    h = np.zeros((10, 10))
    h[:, 5] = 2.0
    hm = HeightMap(GridSpec(10, 10), h)
    assert not detect((8, 5), [], hm)
    assert not detect((8, 5), [ThreatAgent((2, 5))], hm)
    assert detect((3, 5), [ThreatAgent((2, 5))], hm)
    rng = np.random.default_rng(2)
    for _ in range(100):
        h = np.where(rng.random((10, 10)) < 0.2, 2.0, 0.0)
        hm = HeightMap(GridSpec(10, 10), h)
        ts = [ThreatAgent(tuple(int(v) for v in rng.integers(0, 10, 2))) for _ in range(2)]
        r = tuple(int(v) for v in rng.integers(0, 10, 2))
        assert detect(r, ts, hm) == any(los_oracle(h, t.position, r, 1.0, 10.0) for t in ts)


def test_patrol_cycle():
    t = ThreatAgent((0, 0), waypoints=((5, 5),), dwell=2)
    assert [t.at_step(k).position for k in range(5)] == [(0, 0), (0, 0), (5, 5), (5, 5), (0, 0)]
    assert ThreatAgent.from_dict(t.to_dict()) == t


# --- controllers ----------------------------------------------------------------

def test_greedy_q_stall_guard():
    q = QFunction.initial()
    st = make_stack(np.zeros((10, 10)))
    ctrl = GreedyQ(q)
    q.values[:, STOP] = 1.0
    obs = Observation(RobotState(5.5, 5.5, 0.0), st, (9.5, 9.5), (6.5, 5.5), 0.2, 0.3)
    mask = np.ones(N_ACTIONS, dtype=bool)
    assert ctrl.act(obs, mask) == STOP
    assert ctrl.act(obs, mask) != STOP


def test_follower_heads_to_waypoint():
    st = make_stack(np.zeros((10, 10)))
    obs = Observation(RobotState(5.5, 5.5, 0.0), st, (9.5, 5.5), (9.5, 5.5), 0.2, 0.3)
    a = Follower().act(obs, np.ones(N_ACTIONS, dtype=bool))
    assert ACTIONS[a, 0] == 2.0 and ACTIONS[a, 1] == 0.0


# --- episodes -------------------------------------------------------------------

def test_goal_adjacent_success():
    sc = custom_scenario(np.zeros((10, 10)), np.zeros((10, 10)), (4.5, 4.5), (5.5, 4.5))
    m, rows = run_episode(sc, "shortest_path")
    assert m.success and m.termination == "goal"
    assert m.trajectory_length <= 2.0


def test_boxed_in_times_out():
    # a zero table picks action 0 (turn in place) forever inside the enclosure
    h = np.zeros((12, 12))
    h[2:10, 2] = h[2:10, 9] = h[2, 2:10] = h[9, 2:10] = 1.0
    h[9, 5] = 0.0
    sc = custom_scenario(h, np.zeros((12, 12)), (5.5, 5.5), (5.5, 11.5))
    m, rows = run_episode(sc, "cql", q=QFunction.initial())
    assert m.termination == "timeout" and not m.success
    assert m.steps == timeout_steps(sc.stack, (5, 5), (5, 11), SimParams())
    assert m.trajectory_length == 0.0


def test_sealed_box_rejected():
    h = np.zeros((10, 10))
    h[3:8, 3] = h[3:8, 7] = h[3, 3:8] = h[7, 3:8] = 1.0
    sc = custom_scenario(h, np.zeros((10, 10)), (5.5, 5.5), (8.5, 8.5))
    with pytest.raises(InfeasibleScenario):
        run_episode(sc, "shortest_path")


def test_detection_persistence_terminates():
    sc = custom_scenario(np.zeros((20, 20)), np.zeros((20, 20)), (2.5, 2.5), (17.5, 17.5),
                         threats=(ThreatAgent((3, 4), max_range=30.0),))
    m, rows = run_episode(sc, "shortest_path")
    assert m.termination == "detected"
    assert m.steps == 3
    assert m.threat_exposure == 1.0


def test_metric_invariants():
    with pytest.raises(ValueError):
        EpisodeMetrics(True, 1.0, 1.0, 0.0, 0.0, "timeout", 5)
    with pytest.raises(ValueError):
        EpisodeMetrics(False, 1.0, 1.0, 1.5, 0.0, "timeout", 5)


@pytest.mark.parametrize("policy", ["shortest_path", "greedy_cover", "cql"])
def test_replay_matches_reported_metrics(policy, tmp_path):
    sc = build_scenario("mixed", 3, (30, 30))
    q = QFunction.initial()
    m, rows = run_episode(sc, policy, q=q, seed=3)
    write_trace(tmp_path / "t.jsonl", rows)
    back = read_trace(tmp_path / "t.jsonl")
    assert back == rows
    ref = replay_oracle(back, 0.2)
    for k, v in ref.items():
        assert getattr(m, {"navigation_time": "navigation_time"}.get(k, k)) == v
    assert replay_metrics(back, 0.2) == m


def test_episode_deterministic():
    sc = build_scenario("urban", 4, (30, 30))
    q = QFunction.initial()
    a = run_episode(sc, "cql", q=q, seed=4)
    b = run_episode(sc, "cql", q=q, seed=4)
    assert a == b


def test_scenario_deterministic_and_safe():
    a = build_scenario("forest", 9, (30, 30))
    b = build_scenario("forest", 9, (30, 30))
    assert a.start == b.start and a.goal == b.goal and a.threats == b.threats
    s = (math.floor(a.start[0]), math.floor(a.start[1]))
    for t in a.threats:
        assert not line_of_sight(a.stack.height, t.position, s, t.eye_height, t.max_range)
