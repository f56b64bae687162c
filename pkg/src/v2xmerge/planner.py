"""Ego merge skill: gap detection and scoring, merge trajectories and ACC following."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .poly import Quintic
from .prediction.features import as_agent
from .scenario import RoadLayout

INF = math.inf


class NoFeasibleGap(RuntimeError):
    pass


@dataclass(frozen=True)
class AccParams:
    standstill: float = 2.0
    headway: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    delta: float = 4.0
    set_speed: float = 30.0
    clip: Tuple[float, float] = (-4.0, 2.0)


@dataclass(frozen=True)
class PlannerConfig:
    w_accel: float = 1.0
    w_length: float = 0.5
    w_ttc: float = 2.0
    min_gap_margin: float = 12.0  # preferred gap = ego length + margin
    feasible_margin: float = 4.0  # shortest usable gap = ego length + margin
    ax_max: float = 4.0
    ay_max: float = 3.0
    jerk_max: float = 2.0
    comfort_decel: float = 2.0
    lane_change_duration: float = 4.0
    tick: float = 0.1
    tau_step: float = 0.25
    tau_max: float = 20.0
    end_margin: float = 20.0  # crossing must happen this far before the ramp end
    look_range: float = 250.0
    insertion_headway: float = 0.5  # time gap kept to both gap vehicles when aiming inside a gap
    time_weight: float = 0.1  # arrival-time search: |a| + time_weight * tau
    switch_margin: float = 0.3  # cost advantage needed to leave the current gap
    ego_length: float = 4.5
    acc: AccParams = field(default_factory=AccParams)


# --------------------------------------------------------------------------
# ACC


def acc_follow(follower, lead=None, dt: float = 0.1, params: AccParams = AccParams(),
               follower_length: float = 4.5, lead_length: float = 4.5) -> float:
    """IDM acceleration toward ``lead`` (or the set speed), clipped to the ACC limits.

    ``follower``/``lead`` need ``x`` and ``vx``.  The result never reverses
    the follower within ``dt``.
    """
    v = max(follower.vx, 0.0)
    free = 1.0 - (v / params.set_speed) ** params.delta
    a = params.a_max * free
    if lead is not None:
        gap = lead.x - follower.x - 0.5 * (lead_length + follower_length)
        dv = v - lead.vx
        s_star = max(params.standstill,
                     params.standstill + v * params.headway + v * dv / (2 * math.sqrt(params.a_max * params.b_comf)))
        a -= params.a_max * (s_star / max(gap, 0.1)) ** 2
    lo, hi = params.clip
    a = min(max(a, lo), hi)
    if dt > 0:
        a = max(a, -v / dt)
    return a


def acc_equilibrium_gap(v: float, params: AccParams = AccParams()) -> float:
    """Bumper gap at which a follower matching its lead's speed ``v`` holds a = 0."""
    s_star = params.standstill + v * params.headway
    return s_star / math.sqrt(1.0 - (v / params.set_speed) ** params.delta)


# --------------------------------------------------------------------------
# gaps


@dataclass(frozen=True)
class Gap:
    lead_id: Optional[int]
    lag_id: Optional[int]
    length: float
    predicted_length: float
    arrival_time: float
    target_x: float = 0.0  # ego center at insertion
    target_speed: float = 0.0
    required_accel: float = 0.0
    lead_pred: Optional[Tuple[float, float, float]] = None  # predicted (x, vx, length)
    lag_pred: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        if self.length < 0 or self.predicted_length < 0:
            raise ValueError("gap lengths are non-negative")
        if self.arrival_time < 0:
            raise ValueError("arrival time is non-negative")


@dataclass(frozen=True)
class EgoKinematics:
    x: float
    y: float
    vx: float
    ax: float = 0.0
    vy: float = 0.0
    ay: float = 0.0


def _length(t) -> float:
    return float(getattr(t, "length", 4.5))


def gap_length_at(lead, lag, horizon: float) -> float:
    """Bumper gap between two constant-velocity vehicles after ``horizon`` seconds."""
    lx = lead.x + lead.vx * horizon
    gx = lag.x + lag.vx * horizon
    return max(0.0, lx - gx - 0.5 * (_length(lead) + _length(lag)))


def peak_quintic_accel(x0: float, v0: float, a0: float, x1, v1, tau, samples: int = 17) -> np.ndarray:
    """Signed largest-magnitude acceleration of the quintic ``(x0, v0, a0) -> (x1, v1, 0)`` over ``tau``.

    Vectorized over ``x1``/``v1``/``tau``; the acceleration is sampled on
    ``samples`` evenly spaced points including both ends.
    """
    x1, v1, T = np.broadcast_arrays(np.asarray(x1, float), np.asarray(v1, float), np.asarray(tau, float))
    T = T[..., None]
    D = (x1 - x0)[..., None] - v0 * T - 0.5 * a0 * T**2
    V = (v1 - v0)[..., None] - a0 * T
    A = -a0
    c3 = (10 * D - 4 * V * T + 0.5 * A * T**2) / T**3
    c4 = (-15 * D + 7 * V * T - A * T**2) / T**4
    c5 = (6 * D - 3 * V * T + 0.5 * A * T**2) / T**5
    t = np.linspace(0.0, 1.0, samples) * T
    acc = a0 + 6 * c3 * t + 12 * c4 * t**2 + 20 * c5 * t**3
    i = np.argmax(np.abs(acc), axis=-1)
    return np.take_along_axis(acc, i[..., None], axis=-1)[..., 0]


def _insertion_target(ego: EgoKinematics, tau: float, lead, lag, cfg: PlannerConfig,
                      ramp_start: float = -INF) -> Tuple[float, float]:
    """Ego center position and speed to aim for at ``tau``; ``lead``/``lag`` are (x, vx, length).

    Inside a gap the ego aims for the point of the stretch that keeps the
    insertion headway to both vehicles closest to where it would be moving at
    the gap's speed; the position is NaN when that stretch is empty.  Behind or ahead of all traffic it keeps its free-driving
    position where the headway allows.  Either way the position moves forward
    if needed so that a lane change ending there starts at or after
    ``ramp_start``.
    """
    half = 0.5 * cfg.ego_length
    run_up = 0.5 * cfg.lane_change_duration

    def preferred(v):
        return max(ego.x + ego.vx * tau, ramp_start + run_up * max(v, 0.0))

    if lead is not None and lag is not None:
        v = 0.5 * (lead[1] + lag[1])
        lo = lag[0] + 0.5 * lag[2] + cfg.acc.standstill + cfg.insertion_headway * lag[1] + half
        hi = lead[0] - 0.5 * lead[2] - cfg.acc.standstill - cfg.insertion_headway * v - half
        floor = ramp_start + run_up * max(v, 0.0)
        if max(lo, floor) > hi:
            return math.nan, v
        # keep the ego's current place relative to the gap as far as the headways allow
        return min(max(ego.x + v * tau, lo, floor), hi), v
    if lag is not None:
        v = max(ego.vx, lag[1])
        keep = cfg.acc.standstill + cfg.acc.headway * lag[1]
        return max(preferred(v), lag[0] + 0.5 * lag[2] + keep + half), v
    if lead is not None:
        v = min(ego.vx, lead[1])
        keep = cfg.acc.standstill + cfg.acc.headway * ego.vx
        return min(preferred(v), lead[0] - 0.5 * lead[2] - keep - half), v
    return preferred(ego.vx), ego.vx


def _cv(track, tau: float):
    return None if track is None else (track.x + track.vx * tau, track.vx, _length(track))


def _earliest_insertion(cfg: PlannerConfig, committed_crossing: Optional[float]) -> float:
    return committed_crossing if committed_crossing is not None else 0.5 * cfg.lane_change_duration


class _TrackView:
    """Uniform ``x``/``vx``/``length`` access over fusion tracks and agent views."""

    __slots__ = ("src", "track_id", "x", "y", "vx", "length")

    def __init__(self, src):
        a = as_agent(src)
        self.src = src
        self.track_id = getattr(src, "track_id", a.vehicle_id)
        self.x, self.y, self.vx = a.x, a.y, a.vx
        self.length = _length(src)


def _predicted(track: "_TrackView", predictor, others, layout, tau: float):
    """Predicted (x, vx, length) at ``tau``."""
    return float(predictor.predict_point(track.src, others, layout, tau)[0]), track.vx, track.length


GapKey = Tuple[Optional[int], Optional[int]]


def gap_key(gap: Gap) -> GapKey:
    return gap.lead_id, gap.lag_id


def detect_gaps(snapshot: Sequence, predictor, ego: EgoKinematics, layout: RoadLayout,
                config: PlannerConfig = PlannerConfig(), committed_crossing: Optional[float] = None,
                arrival_times: Optional[Mapping[GapKey, float]] = None) -> List[Gap]:
    """Gaps in the merge target lane, ordered from the rearmost to the foremost.

    Let ``a(tau)`` be the peak acceleration of the quintic that brings the
    ego to the gap's insertion point and speed at ``tau``, with the gap's
    vehicles moving at constant velocity.  The arrival time minimizes
    ``|a| + time_weight * tau`` over insertion times before the ramp end.
    ``arrival_times`` pins the arrival time of gaps keyed by
    ``(lead id, lag id)``; a committed lane change pins every gap to its
    crossing time.  The gap's vehicles are then predicted to the arrival
    time with ``predictor``.
    """
    cfg = config
    tracks = [_TrackView(t) for t in snapshot]
    lane = layout.merge_target_lane
    main = sorted((t for t in tracks if layout.lane_at(t.y) == lane and abs(t.x - ego.x) <= cfg.look_range),
                  key=lambda t: (t.x, t.track_id))
    others = [t.src for t in tracks]
    bounds = [None] + main + [None]
    t_first = _earliest_insertion(cfg, committed_crossing)
    grid = np.arange(t_first, cfg.tau_max + 1e-9, cfg.tau_step)
    pinned = arrival_times or {}
    gaps = []
    limit = layout.ramp_end_x - cfg.end_margin
    ramp_start = layout.ramp_start_x if committed_crossing is None else -INF
    for lag, lead in zip(bounds[:-1], bounds[1:]):
        key = (lead.track_id if lead is not None else None, lag.track_id if lag is not None else None)
        if committed_crossing is not None:
            taus = np.array([committed_crossing])
        elif pinned.get(key, -INF) >= t_first - 1e-9:
            taus = np.array([pinned[key]])
        else:
            taus = grid
        targets = np.array([_insertion_target(ego, tau, _cv(lead, tau), _cv(lag, tau), cfg, ramp_start)
                            for tau in taus])
        fits = np.isfinite(targets[:, 0])
        peak = np.full(len(taus), INF)
        peak[fits] = peak_quintic_accel(ego.x, ego.vx, ego.ax, targets[fits, 0], targets[fits, 1], taus[fits])
        score = np.abs(peak) + cfg.time_weight * taus
        ok = fits & (targets[:, 0] <= limit)
        # first minimum wins, so ties go to the earlier arrival
        best_tau = float(taus[np.argmin(np.where(ok, score, INF))] if ok.any() else taus[np.argmin(score)])
        lead_p = None if lead is None else _predicted(lead, predictor, others, layout, best_tau)
        lag_p = None if lag is None else _predicted(lag, predictor, others, layout, best_tau)
        tx, tv = _insertion_target(ego, best_tau, lead_p, lag_p, cfg, ramp_start)
        if lead is not None and lag is not None:
            length = max(0.0, lead.x - lag.x - 0.5 * (lead.length + lag.length))
            pred = max(0.0, lead_p[0] - lag_p[0] - 0.5 * (lead.length + lag.length))
        else:
            length = pred = INF
        need = float(peak_quintic_accel(ego.x, ego.vx, ego.ax, tx, tv, best_tau)) if math.isfinite(tx) else INF
        gaps.append(Gap(*key, length, pred, best_tau, tx, tv, need, lead_p, lag_p))
    return gaps


def _inverse_ttc(distance: float, closing: float) -> float:
    if closing <= 0:
        return 0.0
    if distance <= 0:
        return INF
    return closing / distance


def score_gap(gap: Gap, ego: EgoKinematics, layout: RoadLayout, config: PlannerConfig = PlannerConfig()) -> float:
    cfg = config
    a = gap.required_accel
    if not math.isfinite(gap.target_x) or abs(a) > cfg.ax_max or gap.predicted_length < cfg.ego_length + cfg.feasible_margin:
        return INF
    if gap.target_x > layout.ramp_end_x - cfg.end_margin:
        return INF
    v_ins = gap.target_speed
    if v_ins < 0:
        return INF
    half = 0.5 * cfg.ego_length
    inv_ttc = 0.0
    if gap.lead_pred is not None:
        lx, lv, ll = gap.lead_pred
        inv_ttc += _inverse_ttc(lx - 0.5 * ll - gap.target_x - half, v_ins - lv)
    if gap.lag_pred is not None:
        gx, gv, gl = gap.lag_pred
        inv_ttc += _inverse_ttc(gap.target_x - half - gx - 0.5 * gl, gv - v_ins)
    if not math.isfinite(inv_ttc):
        return INF
    l_min = cfg.ego_length + cfg.min_gap_margin
    shortfall = max(0.0, l_min - gap.predicted_length) if math.isfinite(gap.predicted_length) else 0.0
    return cfg.w_accel * abs(a) + cfg.w_length * shortfall**2 + cfg.w_ttc * inv_ttc


def choose_gap(gaps: Sequence[Gap], ego: EgoKinematics, layout: RoadLayout,
               config: PlannerConfig = PlannerConfig(), keep: Optional[GapKey] = None) -> Tuple[Gap, float]:
    """Cheapest finite-cost gap; equal costs go to the earlier arrival.

    The gap keyed ``keep`` stays chosen while feasible and within
    ``switch_margin`` of the cheapest.
    """
    scored = [(score_gap(g, ego, layout, config), g.arrival_time, i) for i, g in enumerate(gaps)]
    finite = [s for s in scored if math.isfinite(s[0])]
    if not finite:
        raise NoFeasibleGap("every gap is infeasible")
    cost, _, i = min(finite)
    kept = [s for s in finite if gap_key(gaps[s[2]]) == keep]
    if kept and kept[0][0] <= cost + config.switch_margin:
        cost, _, i = kept[0]
    return gaps[i], cost


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class PlannedTrajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must increase strictly")

    def drivable(self, ax_max: float = 4.0, ay_max: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.ax) <= ax_max + 1e-9) and np.all(np.abs(self.ay) <= ay_max + 1e-9))


class SpeedProfile:
    """Jerk-limited speed change: symmetric trapezoidal acceleration from ``v0`` to ``v1`` in ``T``."""

    def __init__(self, v0: float, v1: float, T: float, jerk_max: float = 2.0):
        if T <= 0 or jerk_max <= 0:
            raise ValueError("duration and jerk bound must be positive")
        dv = v1 - v0
        disc = T * T - 4.0 * abs(dv) / jerk_max
        if disc < -1e-12:
            raise ValueError(f"speed change {dv:.2f} m/s in {T:.2f} s violates the jerk bound")
        # smallest peak acceleration: a (T - a / j) = |dv|
        peak = 0.5 * jerk_max * (T - math.sqrt(max(disc, 0.0)))
        self.v0, self.v1, self.T, self.jerk = v0, v1, T, jerk_max
        self.sign = 1.0 if dv >= 0 else -1.0
        self.peak = peak
        self.ramp = peak / jerk_max if peak > 0 else 0.0

    def acc(self, t):
        t = np.asarray(t, dtype=float)
        up = np.clip(t, 0, None) * self.jerk
        down = np.clip(self.T - t, 0, None) * self.jerk
        a = np.minimum(np.minimum(up, down), self.peak)
        return self.sign * np.where((t < 0) | (t > self.T), 0.0, a)

    def vel(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.T)
        r, j, p = self.ramp, self.jerk, self.peak
        # integral of the trapezoid up to tc
        s1 = np.minimum(tc, r)
        area = 0.5 * j * s1 * s1
        s2 = np.clip(tc - r, 0.0, max(self.T - 2 * r, 0.0))
        area = area + p * s2
        s3 = np.clip(tc - (self.T - r), 0.0, r)
        area = area + p * s3 - 0.5 * j * s3 * s3
        return self.v0 + self.sign * area

    def pos(self, t, dt: float = 1e-3):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        grid = np.arange(0.0, max(float(t.max()), 0.0) + dt, dt)
        v = self.vel(grid)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
        return np.interp(t, grid, cum)


def speed_change_profile(v0: float, v1: float, T: float, jerk_max: float = 2.0) -> SpeedProfile:
    return SpeedProfile(v0, v1, T, jerk_max)


@dataclass(frozen=True)
class LateralPlan:
    """Quintic lane change that started at ``t0`` (simulation clock)."""

    t0: float
    poly: Quintic
    target_y: float


def lateral_lane_change(y0: float, y1: float, duration: float, t0: float = 0.0) -> LateralPlan:
    return LateralPlan(t0, Quintic(y0, 0.0, 0.0, y1, 0.0, 0.0, duration), y1)


def plan_merge_trajectory(ego: EgoKinematics, gap: Gap, layout: RoadLayout, horizon: Optional[float] = None,
                          config: PlannerConfig = PlannerConfig(), clock: float = 0.0,
                          lateral: Optional[LateralPlan] = None) -> PlannedTrajectory:
    """Sampled merge trajectory from ``clock`` at planner-tick spacing.

    Longitudinal: quintic from the current (x, v, a) to the gap's insertion
    point and speed at the arrival time, then constant speed.  Lateral: the
    committed lane change if any, otherwise a quintic centered on the
    arrival time.
    """
    cfg = config
    if ego.x >= layout.ramp_end_x:
        raise NoFeasibleGap("ego is past the ramp end")
    tau = max(gap.arrival_time, cfg.tick)
    lon = Quintic(ego.x, ego.vx, ego.ax, gap.target_x, gap.target_speed, 0.0, tau)
    if lateral is None:
        y1 = layout.center(layout.merge_target_lane)
        start = clock + max(0.0, gap.arrival_time - 0.5 * cfg.lane_change_duration)
        lateral = LateralPlan(start, Quintic(ego.y, 0.0, 0.0, y1, 0.0, 0.0, cfg.lane_change_duration), y1)
    if horizon is None:
        horizon = max(tau, lateral.t0 - clock + lateral.poly.T)
    n = max(1, int(math.floor(horizon / cfg.tick + 1e-9)) + 1)
    s = np.arange(n) * cfg.tick
    ls = clock + s - lateral.t0
    traj = PlannedTrajectory(
        clock + s, lon.pos(s), lateral.poly.pos(ls), lon.vel(s), lon.acc(s),
        np.where(ls < 0, 0.0, lateral.poly.acc(ls)), np.where(ls < 0, 0.0, lateral.poly.vel(ls)),
    )
    if not traj.drivable(cfg.ax_max, cfg.ay_max) or np.any(traj.v < -1e-9):
        raise NoFeasibleGap("merge trajectory exceeds the drivability bounds")
    return traj


def _brake_profile(ego: EgoKinematics, decel: float, cfg: PlannerConfig, n: int):
    """Positions, speeds and accelerations over ``n`` ticks of jerk-limited braking at ``decel``."""
    step = cfg.jerk_max * cfg.tick
    a = np.empty(n)
    v = np.empty(n)
    x = np.empty(n)
    a_prev, v[0], x[0] = ego.ax, max(ego.vx, 0.0), ego.x
    for k in range(n):
        if k:
            v[k] = max(v[k - 1] + a[k - 1] * cfg.tick, 0.0)
            x[k] = x[k - 1] + 0.5 * (v[k - 1] + v[k]) * cfg.tick
        target = -decel if v[k] > 1e-6 else 0.0
        a[k] = min(max(target, a_prev - step), a_prev + step)
        if v[k] <= 1e-6:
            a[k] = 0.0
        a_prev = a[k]
    return x, v, a


def _stopping_ticks(ego: EgoKinematics, cfg: PlannerConfig) -> int:
    # generous bound: ramp to the weakest braking plus the time to shed the speed at it
    ramp = (abs(ego.ax) + cfg.ax_max) / cfg.jerk_max
    return int(math.ceil((2 * ramp + max(ego.vx, 0.0) / min(cfg.comfort_decel, cfg.ax_max)) / cfg.tick)) + 2


def fallback_trajectory(ego: EgoKinematics, config: PlannerConfig = PlannerConfig(), clock: float = 0.0,
                        horizon: float = 2.0, stop_x: Optional[float] = None) -> PlannedTrajectory:
    """Braking toward standstill, entered from the current acceleration at the jerk bound.

    The deceleration is the comfort value, raised (up to ``ax_max``) to the
    smallest one that stops the ego center before ``stop_x``, including the
    distance covered while the braking ramps in.
    """
    cfg = config
    decel = cfg.comfort_decel
    if stop_x is not None:
        m = _stopping_ticks(ego, cfg)

        def stop_at(d):
            return _brake_profile(ego, d, cfg, m)[0][-1]

        if stop_at(decel) > stop_x:
            lo, hi = decel, cfg.ax_max
            if stop_at(hi) > stop_x:
                decel = hi
            else:
                for _ in range(40):
                    mid = 0.5 * (lo + hi)
                    lo, hi = (lo, mid) if stop_at(mid) <= stop_x else (mid, hi)
                decel = hi
    n = int(round(horizon / cfg.tick)) + 1
    x, v, a = _brake_profile(ego, decel, cfg, n)
    s = np.arange(n) * cfg.tick
    z = np.zeros(n)
    return PlannedTrajectory(clock + s, x, ego.y + z, v, a, z, z)


# --------------------------------------------------------------------------
# stateful skill used inside the simulation


@dataclass
class PlanStep:
    clock: float
    mode: str  # "merge" | "fallback" | "follow"
    trajectory: PlannedTrajectory
    gap: Optional[Gap] = None
    cost: float = INF


class MergePlanner:
    """Replans every tick until the ego is in the target lane, then follows with ACC."""

    def __init__(self, layout: RoadLayout, predictor, config: PlannerConfig = PlannerConfig()):
        self.layout = layout
        self.predictor = predictor
        self.config = config
        self.lateral: Optional[LateralPlan] = None
        self.merged = False
        self.target: Optional[Tuple[GapKey, float]] = None  # chosen gap and its arrival clock
        self.log: List[list] = []

    def crossing_time(self, clock: float) -> Optional[float]:
        """Time until the committed lane change crosses the lane boundary."""
        if self.lateral is None:
            return None
        return max(self.lateral.t0 + 0.5 * self.lateral.poly.T - clock, self.config.tick)

    def step(self, clock: float, ego: EgoKinematics, snapshot: Sequence) -> PlanStep:
        cfg = self.config
        target_lane = self.layout.merge_target_lane
        if self.layout.lane_at(ego.y) == target_lane and self.lateral is not None:
            self.merged = True
        if self.merged:
            step = self._follow(clock, ego, snapshot)
        else:
            step = self._merge(clock, ego, snapshot)
        g = step.gap
        self.log.append([
            f"{clock:.3f}", step.mode,
            "" if g is None or g.lead_id is None else g.lead_id,
            "" if g is None or g.lag_id is None else g.lag_id,
            f"{step.cost:.6f}" if math.isfinite(step.cost) else "inf",
            f"{float(step.trajectory.ax[0]):.6f}", f"{float(step.trajectory.ay[0]):.6f}",
        ])
        return step

    def _merge(self, clock, ego, snapshot) -> PlanStep:
        cfg = self.config
        try:
            pinned = {self.target[0]: self.target[1] - clock} if self.target else None
            gaps = detect_gaps(snapshot, self.predictor, ego, self.layout, cfg, self.crossing_time(clock), pinned)
            gap, cost = choose_gap(gaps, ego, self.layout, cfg, self.target[0] if self.target else None)
            traj = plan_merge_trajectory(ego, gap, self.layout, None, cfg, clock, self.lateral)
            self.target = (gap_key(gap), clock + gap.arrival_time)
        except NoFeasibleGap:
            self.target = None
            if self.lateral is not None:
                # already changing lanes: keep the lateral motion, brake if needed
                traj = self._committed_brake(clock, ego)
            else:
                traj = fallback_trajectory(ego, cfg, clock, stop_x=self._stop_x())
            return PlanStep(clock, "fallback", traj)
        # start the lane change on the last tick that still leaves half its duration before arrival
        if self.lateral is None and gap.arrival_time < 0.5 * cfg.lane_change_duration + cfg.tick - 1e-9 \
                and self.layout.lane_change_legal(self.layout.ramp_lane_id, self._direction(), ego.x):
            y1 = self.layout.center(self.layout.merge_target_lane)
            self.lateral = lateral_lane_change(ego.y, y1, cfg.lane_change_duration, clock)
            traj = plan_merge_trajectory(ego, gap, self.layout, None, cfg, clock, self.lateral)
        return PlanStep(clock, "merge", traj, gap, cost)

    def _stop_x(self) -> float:
        return self.layout.ramp_end_x - 0.5 * self.config.ego_length

    def _direction(self) -> int:
        return 1 if self.layout.ramp_is_right else -1

    def _committed_brake(self, clock, ego) -> PlannedTrajectory:
        cfg = self.config
        fb = fallback_trajectory(ego, cfg, clock)
        ls = fb.t - self.lateral.t0
        poly = self.lateral.poly
        return PlannedTrajectory(fb.t, fb.x, poly.pos(ls), fb.v, fb.ax,
                                 np.where(ls < 0, 0.0, poly.acc(ls)), np.where(ls < 0, 0.0, poly.vel(ls)))

    def _follow(self, clock, ego, snapshot) -> PlanStep:
        cfg = self.config
        lane = self.layout.merge_target_lane
        ahead = [t for t in (_TrackView(s) for s in snapshot)
                 if self.layout.lane_at(t.y) == lane and t.x > ego.x]
        lead = min(ahead, key=lambda t: t.x) if ahead else None
        a = acc_follow(ego, lead, cfg.tick, cfg.acc, cfg.ego_length, lead.length if lead else 4.5)
        s = np.array([0.0, cfg.tick])
        v = np.maximum(ego.vx + a * s, 0.0)
        x = ego.x + ego.vx * s + 0.5 * a * s * s
        if self.lateral is not None:
            ls = clock + s - self.lateral.t0
            y = self.lateral.poly.pos(ls)
            ay = self.lateral.poly.acc(ls)
            vy = self.lateral.poly.vel(ls)
        else:
            y, ay, vy = np.full(2, ego.y), np.zeros(2), np.zeros(2)
        return PlanStep(clock, "follow", PlannedTrajectory(clock + s, x, y, v, np.full(2, a), ay, vy))


PLANNER_LOG_HEADER = ["clock", "mode", "lead_track", "lag_track", "cost", "ax_cmd", "ay_cmd"]


def write_planner_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLANNER_LOG_HEADER)
        w.writerows(rows)


# --------------------------------------------------------------------------
# interaction


def find_follower(world: dict, ego_id: int, lane_of, lane: int, max_distance: float = math.inf) -> Optional[int]:
    """Closest vehicle behind the ego in ``lane``; ``world`` maps id -> object with ``x``/``y``."""
    ego = world[ego_id]
    behind = [(ego.x - s.x, vid) for vid, s in world.items()
              if vid != ego_id and lane_of(s.y) == lane and s.x < ego.x and ego.x - s.x <= max_distance]
    return min(behind)[1] if behind else None


def interaction_switch(world: dict, ego_id: int, layout: RoadLayout, acc_controlled: set,
                       max_distance: float = 150.0) -> Optional[int]:
    """Hand the ego's new follower over to ACC control; returns its id or None.

    ``world`` holds ground-truth states at the moment the ego enters the
    target lane.  Without a vehicle behind the ego (within ``max_distance``)
    nothing changes.
    """
    vid = find_follower(world, ego_id, layout.lane_at, layout.merge_target_lane, max_distance)
    if vid is not None:
        acc_controlled.add(vid)
    return vid
