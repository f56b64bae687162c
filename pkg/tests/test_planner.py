import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xmerge.planner import (
    AccParams,
    EgoKinematics,
    Gap,
    MergePlanner,
    NoFeasibleGap,
    PlannerConfig,
    SpeedProfile,
    acc_equilibrium_gap,
    acc_follow,
    choose_gap,
    detect_gaps,
    fallback_trajectory,
    gap_key,
    gap_length_at,
    interaction_switch,
    peak_quintic_accel,
    plan_merge_trajectory,
    score_gap,
)
from v2xmerge.poly import Quintic
from v2xmerge.prediction.features import AgentView
from v2xmerge.prediction.predictor import VlkPredictor
from v2xmerge.scenario import RoadLayout

LAYOUT = RoadLayout.default()
CFG = PlannerConfig()


class _Car:
    def __init__(self, x, vx, y=0.0):
        self.x, self.vx, self.y = x, vx, y


def test_quintic_meets_boundary_conditions():
    q = Quintic(1.0, 2.0, 0.5, 40.0, 10.0, -1.0, 4.0)
    assert q.pos(0.0) == pytest.approx(1.0) and q.vel(0.0) == pytest.approx(2.0) and q.acc(0.0) == pytest.approx(0.5)
    assert q.pos(4.0) == pytest.approx(40.0) and q.vel(4.0) == pytest.approx(10.0) and q.acc(4.0) == pytest.approx(-1.0)
    assert q.pos(5.0) == pytest.approx(50.0)  # continues at the end speed
    with pytest.raises(ValueError):
        Quintic(0, 0, 0, 1, 0, 0, 0.0)


@given(st.floats(0, 40), st.floats(-3, 3), st.floats(-50, 300), st.floats(0, 40), st.floats(0.5, 20))
def test_peak_accel_matches_sampled_quintic(v0, a0, dx, v1, tau):
    peak = float(peak_quintic_accel(0.0, v0, a0, dx, v1, tau))
    q = Quintic(0.0, v0, a0, dx, v1, 0.0, tau)
    acc = np.array([q.acc(t) for t in np.linspace(0, tau, 17)])
    assert abs(peak) == pytest.approx(np.abs(acc).max(), rel=1e-6, abs=1e-9)
    assert np.min(np.abs(acc - peak)) <= 1e-6 * max(1.0, abs(peak))


@given(st.floats(0, 35), st.floats(0, 35), st.floats(1, 20))
def test_speed_profile_respects_jerk_bound(v0, v1, T):
    if T * T < 4 * abs(v1 - v0) / 2.0:
        with pytest.raises(ValueError):
            SpeedProfile(v0, v1, T)
        return
    p = SpeedProfile(v0, v1, T)
    t = np.linspace(0, T, 401)
    a = p.acc(t)
    assert p.vel(T) == pytest.approx(v1, abs=1e-9)
    assert np.all(np.abs(np.diff(a)) <= 2.0 * (t[1] - t[0]) + 1e-9)


def test_acc_holds_equilibrium_and_never_reverses():
    v = 25.0
    gap = acc_equilibrium_gap(v)
    lead = _Car(gap + 4.5, v)
    assert acc_follow(_Car(0.0, v), lead) == pytest.approx(0.0, abs=1e-9)
    assert acc_follow(_Car(0.0, 10.0)) > 0
    assert acc_follow(_Car(0.0, 1.0), _Car(5.0, 0.0), dt=0.1) >= -10.0
    assert acc_follow(_Car(0.0, 0.0), _Car(5.0, 0.0), dt=0.1) == 0.0


def test_gap_length_with_constant_velocities():
    assert gap_length_at(_Car(50.0, 20.0), _Car(0.0, 25.0), 2.0) == pytest.approx(50 - 10 - 4.5)
    assert gap_length_at(_Car(10.0, 0.0), _Car(0.0, 25.0), 2.0) == 0.0


def _agents(*xs, v=25.0):
    return [AgentView(i + 10, x, 0.0, v, 0.0) for i, x in enumerate(xs)]


def test_empty_main_lane_gives_one_unbounded_gap():
    ego = EgoKinematics(150.0, -3.75, 22.0)
    (g,) = detect_gaps([], VlkPredictor(), ego, LAYOUT)
    assert g.lead_id is None and g.lag_id is None and math.isinf(g.length)
    assert score_gap(g, ego, LAYOUT) < CFG.ax_max


def test_gaps_are_ordered_rear_to_front():
    ego = EgoKinematics(150.0, -3.75, 22.0)
    snap = _agents(100.0, 180.0, 260.0) + [AgentView(99, 150.0, 3.75, 25.0, 0.0)]
    gaps = detect_gaps(snap, VlkPredictor(), ego, LAYOUT)
    assert [gap_key(g) for g in gaps] == [(10, None), (11, 10), (12, 11), (None, 12)]
    assert all(g.arrival_time >= 0.5 * CFG.lane_change_duration - 1e-9 for g in gaps)


def test_too_short_gap_is_infeasible():
    ego = EgoKinematics(150.0, -3.75, 25.0)
    gaps = detect_gaps(_agents(140.0, 152.0), VlkPredictor(), ego, LAYOUT)
    middle = gaps[1]
    assert math.isinf(score_gap(middle, ego, LAYOUT))


def _gap(key, cost_accel, tau=3.0):
    return Gap(key[0], key[1], math.inf, math.inf, tau, 200.0, 25.0, cost_accel)


def test_choose_gap_prefers_cheapest_with_hysteresis():
    ego = EgoKinematics(150.0, -3.75, 25.0)
    gaps = [_gap((1, None), 1.0), _gap((None, 1), 1.2)]
    assert gap_key(choose_gap(gaps, ego, LAYOUT)[0]) == (1, None)
    assert gap_key(choose_gap(gaps, ego, LAYOUT, keep=(None, 1))[0]) == (None, 1)
    gaps[1] = _gap((None, 1), 1.5)
    assert gap_key(choose_gap(gaps, ego, LAYOUT, keep=(None, 1))[0]) == (1, None)
    with pytest.raises(NoFeasibleGap):
        choose_gap([_gap((1, None), 9.0)], ego, LAYOUT)


def test_merge_trajectory_reaches_target():
    ego = EgoKinematics(150.0, -3.75, 22.0, 0.3)
    g = Gap(None, None, math.inf, math.inf, 5.0, 265.0, 24.0, 0.0)
    tr = plan_merge_trajectory(ego, g, LAYOUT)
    k = int(round(5.0 / CFG.tick))
    assert tr.x[k] == pytest.approx(265.0) and tr.v[k] == pytest.approx(24.0)
    assert tr.y[-1] == pytest.approx(0.0) and tr.drivable()
    assert tr.ax[0] == pytest.approx(0.3)


@given(st.floats(0, 35), st.floats(-4, 2), st.floats(5, 400))
def test_fallback_is_jerk_limited_and_stops(v, a, room):
    ego = EgoKinematics(0.0, -3.75, v, a)
    tr = fallback_trajectory(ego, CFG, horizon=30.0, stop_x=room)
    assert np.all(tr.v >= 0)
    moving = tr.v[1:] > 1e-6  # the step into standstill may drop to zero
    assert np.all(np.abs(np.diff(tr.ax)[moving]) <= CFG.jerk_max * CFG.tick + 1e-9)
    if v > 1e-6:
        assert abs(tr.ax[0] - a) <= CFG.jerk_max * CFG.tick + 1e-9
    assert np.all(tr.ax[tr.v <= 1e-6] == 0.0)
    assert np.all(tr.ax >= -CFG.ax_max - 1e-9)
    # whenever braking at ax_max can stop in time, the chosen deceleration must too
    hardest = fallback_trajectory(ego, CFG, horizon=60.0, stop_x=-math.inf)
    if hardest.x[-1] <= room - 1e-6:
        assert fallback_trajectory(ego, CFG, horizon=60.0, stop_x=room).x[-1] <= room + 1e-6


def test_fallback_stops_before_ramp_end_when_possible():
    ego = EgoKinematics(300.0, -3.75, 20.0)
    tr = fallback_trajectory(ego, CFG, horizon=20.0, stop_x=LAYOUT.ramp_end_x - 2.25)
    assert tr.v[-1] == 0.0 and tr.x[-1] <= LAYOUT.ramp_end_x - 2.25
    assert tr.x[-1] > LAYOUT.ramp_end_x - 10.0  # no harsher than needed


def test_planner_merges_on_empty_road():
    planner = MergePlanner(LAYOUT, VlkPredictor())
    x, y, v, a = 110.0, -3.75, 20.0, 0.0
    for k in range(200):
        clock = k * CFG.tick
        step = planner.step(clock, EgoKinematics(x, y, v, a), [])
        tr = step.trajectory
        a = float(tr.ax[0])
        x, v = float(tr.x[1]), float(tr.v[1])
        y = float(tr.y[1]) if len(tr.y) > 1 else y
        if planner.merged:
            break
    assert planner.merged and x < LAYOUT.ramp_end_x
    assert {row[1] for row in planner.log} <= {"merge", "follow"}


def test_interaction_switch_hands_follower_to_acc():
    world = {1: _Car(200.0, 25.0), 2: _Car(180.0, 25.0), 3: _Car(120.0, 25.0), 4: _Car(190.0, 25.0, y=3.75)}
    acc = set()
    assert interaction_switch(world, 1, LAYOUT, acc) == 2 and acc == {2}
    assert interaction_switch({1: _Car(200.0, 25.0)}, 1, LAYOUT, set()) is None
