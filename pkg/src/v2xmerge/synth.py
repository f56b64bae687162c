"""Synthetic highway traffic with an on-ramp.

Stands in for recorded highD trajectories.  Vehicles are either scripted
(constant speed, optional lane-change script) or driven by an IDM car
follower with a simple incentive/safety lane-change rule.  Recorded
velocities are forward differences of the recorded positions, so every
frame-to-frame displacement equals ``velocity * frame_period``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .poly import Quintic
from .scenario import ConfigError, RoadLayout, ScenarioError, TrajectoryRecord


class InfeasibleSpec(ScenarioError):
    pass


@dataclass
class LaneChangeScript:
    start_time: float
    target_lane: int
    duration: float = 5.0


@dataclass
class VehicleSpec:
    vehicle_id: int
    lane: int
    x0: float
    speed: float
    length: float = 4.5
    width: float = 1.9
    behavior: str = "constant"  # "constant" | "idm"
    desired_speed: Optional[float] = None
    spawn_time: float = 0.0
    lane_changes: List[LaneChangeScript] = field(default_factory=list)


@dataclass
class RandomTraffic:
    """Open-boundary inflow on the main lanes and the ramp."""

    count: int = 60
    speed_range: Tuple[float, float] = (19.0, 28.0)
    lanes: Optional[Tuple[int, ...]] = None  # main lanes by default
    headway_range: Tuple[float, float] = (1.2, 6.0)
    ramp_headway: float = 9.0
    spawn_x: float = -250.0
    ramp_spawn_offset: float = 150.0


@dataclass
class IdmParams:
    standstill: float = 2.0
    headway: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    delta: float = 4.0


@dataclass
class ScenarioSpec:
    layout: RoadLayout = field(default_factory=RoadLayout.default)
    duration: float = 30.0
    frame_period: float = 0.04
    vehicles: List[VehicleSpec] = field(default_factory=list)
    traffic: Optional[RandomTraffic] = None
    auto_lane_change: bool = True
    lane_change_duration: Tuple[float, float] = (4.0, 6.0)
    decision_period: float = 0.5
    lane_change_cooldown: float = 8.0
    road_end_x: Optional[float] = None
    idm: IdmParams = field(default_factory=IdmParams)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario spec keys: {', '.join(sorted(unknown))}")
        if "layout" in d:
            d["layout"] = RoadLayout.from_dict(d["layout"])
        if "vehicles" in d:
            vs = []
            for v in d["vehicles"]:
                v = dict(v)
                v["lane_changes"] = [LaneChangeScript(**lc) for lc in v.get("lane_changes", [])]
                vs.append(VehicleSpec(**v))
            d["vehicles"] = vs
        if d.get("traffic") is not None:
            t = dict(d["traffic"])
            for k in ("speed_range", "headway_range", "lanes"):
                if t.get(k) is not None:
                    t[k] = tuple(t[k])
            d["traffic"] = RandomTraffic(**t)
        if "idm" in d:
            d["idm"] = IdmParams(**d["idm"])
        if "lane_change_duration" in d:
            d["lane_change_duration"] = tuple(d["lane_change_duration"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def idm_acceleration(v: float, v0: float, gap: float, dv: float, p: IdmParams) -> float:
    """Plain IDM; ``gap`` is bumper to bumper, ``dv`` = own speed - lead speed."""
    v = max(v, 0.0)
    s_star = p.standstill + v * p.headway + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    s_star = max(s_star, p.standstill)
    free = 1.0 - (v / max(v0, 0.1)) ** p.delta
    if not math.isfinite(gap):
        return p.a_max * free
    return p.a_max * (free - (s_star / max(gap, 0.1)) ** 2)


class _Agent:
    __slots__ = (
        "spec", "x", "v", "lane", "src_lane", "lc", "lc_t0", "lc_y0", "last_lc", "v0",
        "active", "done", "xs", "ys", "vs", "frames", "scripts", "crossed",
    )

    def __init__(self, spec: VehicleSpec, layout: RoadLayout):
        self.spec = spec
        self.x = spec.x0
        self.v = spec.speed
        self.lane = spec.lane
        self.src_lane = spec.lane
        self.lc: Optional[Quintic] = None
        self.lc_t0 = 0.0
        self.lc_y0 = layout.center(spec.lane)
        self.last_lc = -1e9
        self.v0 = spec.desired_speed if spec.desired_speed is not None else spec.speed
        self.active = False
        self.done = False
        self.crossed = True
        self.xs: List[float] = []
        self.ys: List[float] = []
        self.vs: List[float] = []
        self.frames: List[int] = []
        self.scripts = sorted(spec.lane_changes, key=lambda s: s.start_time)

    def occupies(self, lane: int) -> bool:
        return lane == self.lane or (self.lc is not None and not self.crossed and lane == self.src_lane)


def _validate(spec: ScenarioSpec, vehicles: Sequence[VehicleSpec]) -> None:
    layout = spec.layout
    ids = [v.vehicle_id for v in vehicles]
    if len(set(ids)) != len(ids):
        raise InfeasibleSpec("duplicate vehicle ids")
    for v in vehicles:
        if not layout.has_lane(v.lane):
            raise InfeasibleSpec(f"vehicle {v.vehicle_id}: no lane {v.lane}")
        if v.behavior not in ("constant", "idm"):
            raise InfeasibleSpec(f"vehicle {v.vehicle_id}: unknown behavior {v.behavior!r}")
        if v.length <= 0 or v.width <= 0 or v.speed < 0:
            raise InfeasibleSpec(f"vehicle {v.vehicle_id}: bad dimensions or speed")
        for s in v.lane_changes:
            if not layout.has_lane(s.target_lane) or s.duration <= 0:
                raise InfeasibleSpec(f"vehicle {v.vehicle_id}: bad lane-change script")
    initial = [v for v in vehicles if v.spawn_time <= 0]
    for i, a in enumerate(initial):
        for b in initial[i + 1:]:
            if a.lane == b.lane and abs(a.x0 - b.x0) < 0.5 * (a.length + b.length) + 1.0:
                raise InfeasibleSpec(f"vehicles {a.vehicle_id} and {b.vehicle_id} overlap at spawn")


def _random_vehicles(spec: ScenarioSpec, rng: np.random.Generator, first_id: int) -> List[VehicleSpec]:
    t = spec.traffic
    layout = spec.layout
    lanes = t.lanes or tuple(i for i in range(1, layout.lane_count + 1) if i != layout.ramp_lane_id)
    out: List[VehicleSpec] = []
    vid = first_id
    lo, hi = t.speed_range
    # main lanes: pre-filled stretch plus inflow at spawn_x
    for lane in lanes:
        tt = 0.0
        while tt < spec.duration and len(out) < t.count:
            speed = float(rng.uniform(lo, hi))
            out.append(
                VehicleSpec(vid, lane, t.spawn_x, speed, behavior="idm",
                            desired_speed=speed + float(rng.normal(0.0, 1.5)), spawn_time=tt)
            )
            vid += 1
            tt += float(rng.uniform(*t.headway_range))
    # ramp inflow
    tt = float(rng.uniform(0.0, t.ramp_headway))
    while tt < spec.duration and len(out) < t.count + t.count // 4:
        speed = float(rng.uniform(lo - 4.0, lo))
        out.append(
            VehicleSpec(vid, layout.ramp_lane_id, layout.ramp_start_x - t.ramp_spawn_offset, speed,
                        behavior="idm", desired_speed=float(rng.uniform(lo, hi)), spawn_time=tt)
        )
        vid += 1
        tt += float(rng.exponential(t.ramp_headway)) + 2.0
    return out


def generate_synthetic_scenario(spec: ScenarioSpec, seed: int = 0):
    """Simulate ``spec`` and return ``(records, layout)``."""
    rng = np.random.default_rng(seed)
    layout = spec.layout
    vehicles = list(spec.vehicles)
    if spec.traffic is not None:
        first = max((v.vehicle_id for v in vehicles), default=0) + 1
        vehicles += _random_vehicles(spec, rng, first)
    if not vehicles:
        raise InfeasibleSpec("at least one vehicle is required")
    _validate(spec, vehicles)

    dt = spec.frame_period
    n_frames = int(round(spec.duration / dt)) + 1
    agents = [_Agent(v, layout) for v in vehicles]
    road_end = spec.road_end_x if spec.road_end_x is not None else math.inf
    decision_every = max(1, int(round(spec.decision_period / dt)))
    idm = spec.idm
    lc_lo, lc_hi = spec.lane_change_duration

    def start_lane_change(a: _Agent, target: int, t: float, duration: float) -> None:
        y0 = a.lc_y0 if a.lc is None else float(a.lc.pos(t - a.lc_t0))
        a.src_lane = a.lane
        a.lane = target
        a.lc = Quintic(y0, 0.0, 0.0, layout.center(target), 0.0, 0.0, duration)
        a.lc_t0 = t
        a.lc_y0 = y0
        a.last_lc = t
        a.crossed = False

    def neighbours(a: _Agent, lane: int, active: List[_Agent]):
        lead = follow = None
        for b in active:
            if b is a or not b.occupies(lane):
                continue
            if b.x >= a.x:
                if lead is None or b.x < lead.x:
                    lead = b
            elif follow is None or b.x > follow.x:
                follow = b
        return lead, follow

    def accel_behind(a: _Agent, lead: Optional[_Agent], lane: int) -> float:
        gap, dv = math.inf, 0.0
        if lead is not None:
            gap = lead.x - a.x - 0.5 * (lead.spec.length + a.spec.length)
            dv = a.v - lead.v
        if lane == layout.ramp_lane_id:
            g_end = layout.ramp_end_x - a.x - 0.5 * a.spec.length
            if g_end < gap:
                gap, dv = g_end, a.v
        return idm_acceleration(a.v, a.v0, gap, dv, idm)

    for k in range(n_frames):
        t = k * dt
        for a in agents:
            if not a.active and not a.done and t >= a.spec.spawn_time - 1e-9:
                if a.spec.spawn_time > 0:
                    # delay inflow until the entry is free
                    blocked = any(
                        b.active and b.occupies(a.lane) and abs(b.x - a.x) < a.spec.length + 2.0 + a.v * 1.0
                        for b in agents
                    )
                    if blocked:
                        continue
                a.active = True
        active = [a for a in agents if a.active]

        # decisions
        for a in active:
            while a.scripts and t >= a.scripts[0].start_time - 1e-9:
                s = a.scripts.pop(0)
                if s.target_lane != a.lane:
                    start_lane_change(a, s.target_lane, t, s.duration)
            if (
                spec.auto_lane_change
                and a.spec.behavior == "idm"
                and k % decision_every == 0
                and a.lc is None
                and t - a.last_lc >= spec.lane_change_cooldown
            ):
                lead, _ = neighbours(a, a.lane, active)
                a_cur = accel_behind(a, lead, a.lane)
                on_ramp = a.lane == layout.ramp_lane_id
                for direction in ((1, -1) if layout.ramp_is_right else (-1, 1)):
                    target = a.lane + direction
                    if not layout.lane_change_legal(a.lane, direction, a.x):
                        continue
                    nlead, nfollow = neighbours(a, target, active)
                    if nlead is not None and nlead.x - a.x - 0.5 * (nlead.spec.length + a.spec.length) < 2.0:
                        continue
                    if nfollow is not None:
                        g = a.x - nfollow.x - 0.5 * (nfollow.spec.length + a.spec.length)
                        if g < 2.0:
                            continue
                        a_follow = idm_acceleration(nfollow.v, nfollow.v0, g, nfollow.v - a.v, idm)
                        if a_follow < -3.0:
                            continue
                    a_new = accel_behind(a, nlead, target)
                    leaving_ramp = on_ramp and target != layout.ramp_lane_id
                    toward_fast = (direction > 0) == layout.ramp_is_right
                    if leaving_ramp:
                        gain_ok = True
                    elif toward_fast:
                        gain_ok = a_new - a_cur > 0.3
                    else:
                        gain_ok = a_new - a_cur > -0.1 and a_cur > -0.5
                    if gain_ok:
                        start_lane_change(a, target, t, float(rng.uniform(lc_lo, lc_hi)))
                        break

        # record and integrate
        accels = {}
        for a in active:
            if a.spec.behavior == "idm":
                lead, _ = neighbours(a, a.lane, active)
                accels[id(a)] = accel_behind(a, lead, a.lane)
            else:
                accels[id(a)] = 0.0
        for a in active:
            if a.lc is not None:
                tau = t - a.lc_t0
                y = float(a.lc.pos(tau))
                if tau >= a.lc.T:
                    a.lc = None
                    a.lc_y0 = layout.center(a.lane)
                    y = a.lc_y0
                elif not a.crossed and layout.lane_at(y) == a.lane:
                    a.crossed = True
            else:
                y = a.lc_y0
            a.frames.append(k)
            a.xs.append(a.x)
            a.ys.append(y)
            a.vs.append(a.v)
        for a in active:
            acc = accels[id(a)]
            a.x = a.x + a.v * dt
            a.v = max(0.0, a.v + acc * dt)
            if a.x > road_end:
                a.active = False
                a.done = True

    records: List[TrajectoryRecord] = []
    for a in agents:
        if not a.frames:
            continue
        xs, ys = np.array(a.xs), np.array(a.ys)
        vx = np.array(a.vs)
        vy = np.zeros_like(ys)
        vy[:-1] = np.diff(ys) / dt
        if a.lc is not None:
            vy[-1] = float(a.lc.vel(a.frames[-1] * dt - a.lc_t0))
        for i, f in enumerate(a.frames):
            lane = layout.lane_at(ys[i])
            if lane is None:
                lane = int(np.argmin([abs(c - ys[i]) for c in layout.lane_centers])) + 1
            records.append(
                TrajectoryRecord(f, a.spec.vehicle_id, float(xs[i]), float(ys[i]), a.spec.length,
                                 a.spec.width, float(vx[i]), float(vy[i]), lane)
            )
    records.sort(key=lambda r: (r.frame, r.vehicle_id))
    return records, layout
