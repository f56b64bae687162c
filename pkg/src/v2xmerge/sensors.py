"""Field-of-view sensing with occlusion and polar measurement noise."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .geo import Body, RelativeMeasurement, VehicleState, normalize_angle, relative_measurement_between
from .scenario import ConfigError

KINDS = ("LRR", "MRR", "camera", "lidar")


@dataclass(frozen=True)
class SensorSpec:
    kind: str
    mount_yaw: float  # rad, relative to the vehicle heading
    range: float
    half_angle: float
    sigma_range: float = 0.5
    sigma_bearing: float = math.radians(0.5)
    sigma_range_rate: float = 0.2
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown sensor kind {self.kind!r}")
        if self.range <= 0:
            raise ConfigError("sensor range must be > 0")
        if not 0 < self.half_angle <= math.pi:
            raise ConfigError("sensor half_angle must be in (0, pi]")
        if min(self.sigma_range, self.sigma_bearing, self.sigma_range_rate) < 0:
            raise ConfigError("noise standard deviations must be >= 0")

    def sees(self, rng_m: float, bearing: float) -> bool:
        return rng_m <= self.range and abs(normalize_angle(bearing - self.mount_yaw)) <= self.half_angle

    def noiseless(self) -> "SensorSpec":
        return SensorSpec(self.kind, self.mount_yaw, self.range, self.half_angle, 0.0, 0.0, 0.0, self.name)


def default_sensor_suite() -> List[SensorSpec]:
    d = math.radians
    return [
        SensorSpec("LRR", 0.0, 200.0, d(9.0), name="LRR-front"),
        SensorSpec("LRR", math.pi, 200.0, d(9.0), name="LRR-rear"),
        SensorSpec("MRR", d(45.0), 60.0, d(60.0), name="MRR-front-left"),
        SensorSpec("MRR", d(-45.0), 60.0, d(60.0), name="MRR-front-right"),
        SensorSpec("MRR", d(135.0), 60.0, d(60.0), name="MRR-rear-left"),
        SensorSpec("MRR", d(-135.0), 60.0, d(60.0), name="MRR-rear-right"),
        SensorSpec("camera", 0.0, 80.0, d(25.0), name="camera-front"),
        SensorSpec("lidar", 0.0, 60.0, d(70.0), name="lidar-front"),
    ]


_SUITE_KEYS = {"kind", "mount_yaw_deg", "range", "half_angle_deg", "sigma_range", "sigma_bearing_deg",
               "sigma_range_rate", "name"}


def load_sensor_suite(path) -> List[SensorSpec]:
    """Read a JSON list of sensors; angles are given in degrees."""
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ConfigError("sensor suite must be a list")
    suite = []
    for e in entries:
        unknown = set(e) - _SUITE_KEYS
        if unknown:
            raise ConfigError(f"unknown sensor keys: {', '.join(sorted(unknown))}")
        suite.append(
            SensorSpec(
                kind=e["kind"],
                mount_yaw=math.radians(e.get("mount_yaw_deg", 0.0)),
                range=float(e["range"]),
                half_angle=math.radians(e["half_angle_deg"]),
                sigma_range=float(e.get("sigma_range", 0.5)),
                sigma_bearing=math.radians(e.get("sigma_bearing_deg", 0.5)),
                sigma_range_rate=float(e.get("sigma_range_rate", 0.2)),
                name=e.get("name", ""),
            )
        )
    return suite


def dump_sensor_suite(suite: Sequence[SensorSpec]) -> list:
    return [
        {
            "kind": s.kind,
            "name": s.name,
            "mount_yaw_deg": round(math.degrees(s.mount_yaw), 9),
            "range": s.range,
            "half_angle_deg": round(math.degrees(s.half_angle), 9),
            "sigma_range": s.sigma_range,
            "sigma_bearing_deg": round(math.degrees(s.sigma_bearing), 9),
            "sigma_range_rate": s.sigma_range_rate,
        }
        for s in suite
    ]


def visible_sensors(suite: Sequence[SensorSpec], rel_pos) -> List[SensorSpec]:
    dx, dy = float(rel_pos[0]), float(rel_pos[1])
    r = math.hypot(dx, dy)
    b = math.atan2(dy, dx)
    return [s for s in suite if s.sees(r, b)]


def in_field_of_view(suite: Sequence[SensorSpec], rel_pos) -> Set[str]:
    return {s.kind for s in visible_sensors(suite, rel_pos)}


def _segment_hits_box(p0, p1, center, psi, half_l, half_w) -> bool:
    # Liang-Barsky clip of the segment against the box in its own frame
    c, s = math.cos(psi), math.sin(psi)
    ax, ay = p0[0] - center[0], p0[1] - center[1]
    bx, by = p1[0] - center[0], p1[1] - center[1]
    u0 = (c * ax + s * ay, -s * ax + c * ay)
    u1 = (c * bx + s * by, -s * bx + c * by)
    d = (u1[0] - u0[0], u1[1] - u0[1])
    t0, t1 = 0.0, 1.0
    for axis, half in ((0, half_l), (1, half_w)):
        if abs(d[axis]) < 1e-12:
            if abs(u0[axis]) > half:
                return False
            continue
        ta = (-half - u0[axis]) / d[axis]
        tb = (half - u0[axis]) / d[axis]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return False
    return True


def occluded(observer: VehicleState, target: Body, blockers: Iterable[Body]) -> bool:
    """True iff the centre-to-centre sight line crosses a blocker footprint."""
    p0 = (observer.x, observer.y)
    p1 = (target.state.x, target.state.y)
    for b in blockers:
        if b.vehicle_id == target.vehicle_id:
            continue
        st = b.state
        if _segment_hits_box(p0, p1, (st.x, st.y), st.psi, 0.5 * b.length, 0.5 * b.width):
            return True
    return False


@dataclass(frozen=True)
class Detection:
    measurement: RelativeMeasurement
    sensor_kind: str

    @property
    def timestamp(self) -> float:
        return self.measurement.timestamp


def sense(
    observer_id: int,
    snapshot: Mapping[int, Body],
    suite: Sequence[SensorSpec],
    rng: np.random.Generator,
    clock: float,
    occlusion: bool = True,
    ids_known: bool = True,
) -> List[Detection]:
    """Detections of every visible, non-occluded vehicle around ``observer_id``.

    Noise is drawn in polar coordinates (range, bearing, radial and
    tangential relative speed) and the reported covariance is the polar
    covariance linearised into the observer frame.  Each detected target
    consumes four standard normals, in ascending vehicle-id order.
    """
    me = snapshot[observer_id].state
    others = [b for vid, b in sorted(snapshot.items()) if vid != observer_id]
    if not others or not suite:
        return []
    S = np.array([[b.state.x, b.state.y, b.state.vx, b.state.vy] for b in others])
    c, s_ = math.cos(me.psi), math.sin(me.psi)
    dxw, dyw = S[:, 0] - me.x, S[:, 1] - me.y
    dvxw, dvyw = S[:, 2] - me.vx, S[:, 3] - me.vy
    rel = np.column_stack([c * dxw + s_ * dyw, -s_ * dxw + c * dyw, c * dvxw + s_ * dvyw, -s_ * dvxw + c * dvyw])
    r = np.hypot(rel[:, 0], rel[:, 1])
    b = np.arctan2(rel[:, 1], rel[:, 0])
    # most accurate covering sensor; ties go to the first in suite order
    best = np.full(len(others), -1)
    best_sigma = np.full(len(others), np.inf)
    for k, sensor in enumerate(suite):
        off = np.pi - (np.pi - (b - sensor.mount_yaw)) % (2.0 * np.pi)
        better = (r <= sensor.range) & (np.abs(off) <= sensor.half_angle) & (sensor.sigma_range < best_sigma)
        best[better] = k
        best_sigma[better] = sensor.sigma_range
    seen = np.flatnonzero(best >= 0)
    picked = list(seen)
    if occlusion and len(seen):
        # candidate blockers: closer than the target and near its sight line
        length = np.array([o.length for o in others])
        radius = 0.5 * np.hypot(length, [o.width for o in others])
        ri = np.maximum(r[seen], 1e-12)[:, None]
        ux, uy = dxw[seen, None] / ri, dyw[seen, None] / ri
        along = np.clip(dxw * ux + dyw * uy, 0.0, ri)
        off_line = np.hypot(dxw - along * ux, dyw - along * uy)
        cand = (r < ri + 0.5 * length) & (off_line <= radius)
        cand[np.arange(len(seen)), seen] = False
        picked = [i for row, i in zip(cand, seen)
                  if not (row.any() and occluded(me, others[i], [others[j] for j in np.flatnonzero(row)]))]
    if not picked:
        return []
    noise = rng.standard_normal((len(picked), 4))
    used = [suite[best[i]] for i in picked]
    sigma = np.array([[u.sigma_range, u.sigma_bearing, u.sigma_range_rate] for u in used])
    z, covs = noisy_measurements(rel[picked], sigma, noise)
    return [
        Detection(RelativeMeasurement(*zi.tolist(), ci, clock, observer_id, others[i].vehicle_id if ids_known else None),
                  u.kind)
        for i, u, zi, ci in zip(picked, used, z, covs)
    ]


def noisy_measurements(rel: np.ndarray, sigma: np.ndarray, noise: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Perturb relative states ``(k, 4)`` in polar coordinates.

    ``sigma`` rows are (range, bearing, range rate) deviations and ``noise``
    rows are standard normals for (range, bearing, radial and tangential
    speed).  Returns the measured states and their observer-frame
    covariances, the position block linearised at the measurement.
    """
    dx, dy, dvx, dvy = rel.T
    s_r, s_b, s_v = sigma.T
    r = np.hypot(dx, dy)
    b = np.arctan2(dy, dx)
    vr = dvx * np.cos(b) + dvy * np.sin(b)
    vt = -dvx * np.sin(b) + dvy * np.cos(b)
    r_m = np.maximum(r + s_r * noise[:, 0], 0.0)
    b_m = b + s_b * noise[:, 1]
    vr_m = vr + s_v * noise[:, 2]
    vt_m = vt + s_v * noise[:, 3]
    cb, sb = np.cos(b_m), np.sin(b_m)
    z = np.column_stack([r_m * cb, r_m * sb, vr_m * cb - vt_m * sb, vr_m * sb + vt_m * cb])
    sr2, rr, sv2 = s_r**2, (r_m * s_b) ** 2, s_v**2
    covs = np.zeros((len(rel), 4, 4))
    covs[:, 0, 0] = cb * cb * sr2 + sb * sb * rr
    covs[:, 1, 1] = sb * sb * sr2 + cb * cb * rr
    covs[:, 0, 1] = covs[:, 1, 0] = cb * sb * (sr2 - rr)
    covs[:, 2, 2] = covs[:, 3, 3] = sv2
    return z, covs
