"""The 23-element maneuver feature vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..scenario import DASHED, SOLID, RoadLayout

SENTINEL_DISTANCE = 150.0

_SLOTS = ("own_lead", "own_rear", "left_lead", "left_rear", "right_lead", "right_rear")

FEATURE_NAMES = (
    ("left_marking_offset", "right_marking_offset", "lateral_velocity", "longitudinal_velocity",
     "longitudinal_acceleration", "left_marking_solid", "left_marking_dashed", "right_marking_solid",
     "right_marking_dashed")
    + tuple(f"{slot}_{q}" for slot in _SLOTS for q in ("dx", "dvx"))
    + ("left_change_legal", "right_change_legal")
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 23

F_LEFT_OFFSET = 0
F_RIGHT_OFFSET = 1
F_VY = 2
F_VX = 3
F_AX = 4
F_OWN_LEAD_DX = 9
F_OWN_LEAD_DV = 10


class TargetOffRoad(ValueError):
    pass


@dataclass(frozen=True)
class AgentView:
    """What the predictor needs to know about one vehicle."""

    vehicle_id: Optional[int]
    x: float
    y: float
    vx: float
    vy: float
    ax: float = 0.0
    equipped: bool = False
    role: int = 0


def agent_from_track(track) -> AgentView:
    x = track.x
    return AgentView(track.vehicle_id if track.vehicle_id is not None else track.track_id,
                     float(x[0]), float(x[1]), float(x[3]), float(x[4]), float(track.accel),
                     bool(track.equipped), int(track.role))


def as_agent(obj) -> AgentView:
    return obj if isinstance(obj, AgentView) else agent_from_track(obj)


def _one_hot(marking: str):
    return (1.0 if marking == SOLID else 0.0, 1.0 if marking == DASHED else 0.0)


def extract_features(target: AgentView, others: Sequence[AgentView], layout: RoadLayout) -> np.ndarray:
    lane = layout.lane_at(target.y)
    if lane is None:
        raise TargetOffRoad(f"lateral position {target.y:.2f} m is outside the road")
    f = np.empty(N_FEATURES)
    f[F_LEFT_OFFSET] = layout.left_boundary(lane) - target.y
    f[F_RIGHT_OFFSET] = layout.right_boundary(lane) - target.y
    f[F_VY] = target.vy
    f[F_VX] = target.vx
    f[F_AX] = target.ax
    f[5:7] = _one_hot(layout.left_marking(lane))
    f[7:9] = _one_hot(layout.right_marking(lane))

    lanes = (lane, lane + 1, lane - 1)
    leads = [SENTINEL_DISTANCE] * 3
    rears = [-SENTINEL_DISTANCE] * 3
    lead_dv = [0.0] * 3
    rear_dv = [0.0] * 3
    for o in others:
        if o is target or (o.vehicle_id is not None and o.vehicle_id == target.vehicle_id):
            continue
        ol = layout.lane_at(o.y)
        if ol not in lanes:
            continue
        k = lanes.index(ol)
        dx = o.x - target.x
        if dx >= 0:
            if dx < leads[k]:
                leads[k], lead_dv[k] = dx, o.vx - target.vx
        elif dx > rears[k]:
            rears[k], rear_dv[k] = dx, o.vx - target.vx
    for k in range(3):
        base = 9 + 4 * k
        f[base:base + 4] = (leads[k], lead_dv[k], rears[k], rear_dv[k])
    f[21] = 1.0 if layout.lane_change_legal(lane, +1, target.x) else 0.0
    f[22] = 1.0 if layout.lane_change_legal(lane, -1, target.x) else 0.0
    return f


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std
