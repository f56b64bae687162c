"""Planar frames, vehicle states and the measurement-composition math.

World frame W is a flat local Cartesian frame (x along the road, y to the
left).  Each vehicle carries its own frame V rotated by its heading psi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

# heading falls back to the observer heading below this speed
HEADING_SPEED_FLOOR = 0.1

STATE_DIM = 5
IX, IY, IPSI, IVX, IVY = range(STATE_DIM)


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


def rotation(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s], [s, c]])


def _rotation_derivative(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class FramePose:
    x: float
    y: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", normalize_angle(self.psi))


@dataclass(frozen=True)
class VehicleState:
    """World-frame kinematic state ``(x, y, psi, vx, vy)``."""

    x: float
    y: float
    psi: float
    vx: float
    vy: float

    def __post_init__(self):
        vals = (self.x, self.y, self.psi, self.vx, self.vy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite vehicle state {vals}")
        object.__setattr__(self, "psi", normalize_angle(self.psi))

    @classmethod
    def from_array(cls, a) -> "VehicleState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(a[4]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.vx, self.vy])

    @property
    def pose(self) -> FramePose:
        return FramePose(self.x, self.y, self.psi)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class Body:
    """A vehicle state with its footprint; ``length`` runs along the heading."""

    vehicle_id: int
    state: VehicleState
    length: float = 4.5
    width: float = 1.9


@dataclass(frozen=True, eq=False)
class RelativeMeasurement:
    """Relative position/velocity of a target in the observer's frame V."""

    dx: float
    dy: float
    dvx: float
    dvy: float
    cov: np.ndarray
    timestamp: float
    observer_id: Optional[int] = None
    target_id: Optional[int] = None

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (4, 4):
            raise ValueError("relative measurement covariance must be 4x4")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        object.__setattr__(self, "cov", cov)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dvx, self.dvy])


def rotate_v_to_w(pose: FramePose, vec) -> np.ndarray:
    return rotation(pose.psi) @ np.asarray(vec, dtype=float)


def _heading_from_velocity(vx: float, vy: float, fallback: float) -> float:
    if math.hypot(vx, vy) < HEADING_SPEED_FLOOR:
        return fallback
    return math.atan2(vy, vx)


def compose_measurement(observer: VehicleState, m: RelativeMeasurement) -> VehicleState:
    """Absolute world state of the target seen in ``m`` by ``observer``.

    Position and velocity are the observer's plus the rotated relative
    vectors; heading follows the resulting world velocity.
    """
    rel = m.as_array()
    if not np.all(np.isfinite(rel)):
        raise ValueError("non-finite relative measurement")
    rot = rotation(observer.psi)
    p = observer.position + rot @ rel[:2]
    v = observer.velocity + rot @ rel[2:]
    psi = _heading_from_velocity(v[0], v[1], observer.psi)
    return VehicleState(p[0], p[1], psi, v[0], v[1])


def relative_measurement_between(observer: VehicleState, target: VehicleState):
    """Inverse of :func:`compose_measurement`: ``(dx, dy, dvx, dvy)`` in V."""
    rot_t = rotation(observer.psi).T
    d = rot_t @ (target.position - observer.position)
    dv = rot_t @ (target.velocity - observer.velocity)
    return np.concatenate([d, dv])


def composition_jacobian(observer: VehicleState, m: RelativeMeasurement) -> np.ndarray:
    """5x9 Jacobian of the composed world state.

    Columns 0..4 are the observer state ``(x, y, psi, vx, vy)``, columns 5..8
    the relative measurement ``(dx, dy, dvx, dvy)``.
    """
    rot = rotation(observer.psi)
    drot = _rotation_derivative(observer.psi)
    d = np.array([m.dx, m.dy])
    dv = np.array([m.dvx, m.dvy])
    vw = observer.velocity + rot @ dv

    J = np.zeros((STATE_DIM, 9))
    J[0:2, 0:2] = np.eye(2)
    J[0:2, IPSI] = drot @ d
    J[0:2, 5:7] = rot
    J[3:5, 3:5] = np.eye(2)
    J[3:5, IPSI] = drot @ dv
    J[3:5, 7:9] = rot

    speed2 = float(vw @ vw)
    if math.sqrt(speed2) < HEADING_SPEED_FLOOR:
        J[IPSI, IPSI] = 1.0
    else:
        # d atan2(vy, vx) / d(vx, vy)
        g = np.array([-vw[1], vw[0]]) / speed2
        J[IPSI, :] = g @ J[3:5, :]
    return J


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def propagate_covariance(
    observer: VehicleState, m: RelativeMeasurement, observer_cov: np.ndarray
) -> np.ndarray:
    """World-frame 5x5 covariance of the composed target state.

    First-order error propagation through :func:`composition_jacobian` of the
    block-diagonal joint covariance of observer state and measurement.
    """
    J = composition_jacobian(observer, m)
    joint = np.zeros((9, 9))
    joint[:5, :5] = observer_cov
    joint[5:, 5:] = m.cov
    return symmetrize(J @ joint @ J.T)


def compose_many(observer: VehicleState, observer_cov: np.ndarray, rel, rel_cov):
    """Vectorized :func:`compose_measurement` plus :func:`propagate_covariance`.

    ``rel`` is (n, 4) and ``rel_cov`` (n, 4, 4); returns world states (n, 5)
    and covariances (n, 5, 5).
    """
    rel = np.asarray(rel, dtype=float).reshape(-1, 4)
    rel_cov = np.asarray(rel_cov, dtype=float).reshape(-1, 4, 4)
    n = len(rel)
    rot = rotation(observer.psi)
    drot = _rotation_derivative(observer.psi)
    p = observer.position + rel[:, :2] @ rot.T
    v = observer.velocity + rel[:, 2:] @ rot.T
    speed2 = np.einsum("ij,ij->i", v, v)
    moving = np.sqrt(speed2) >= HEADING_SPEED_FLOOR
    psi = np.where(moving, np.arctan2(v[:, 1], v[:, 0]), observer.psi)
    states = np.column_stack([p[:, 0], p[:, 1], psi, v[:, 0], v[:, 1]])

    J = np.zeros((n, STATE_DIM, 9))
    J[:, 0, 0] = J[:, 1, 1] = 1.0
    J[:, 0:2, IPSI] = rel[:, :2] @ drot.T
    J[:, 0:2, 5:7] = rot
    J[:, 3, 3] = J[:, 4, 4] = 1.0
    J[:, 3:5, IPSI] = rel[:, 2:] @ drot.T
    J[:, 3:5, 7:9] = rot
    safe = np.where(moving, speed2, 1.0)
    g = np.column_stack([-v[:, 1], v[:, 0]]) / safe[:, None]
    J[:, IPSI, :] = np.where(moving[:, None], np.einsum("ni,nij->nj", g, J[:, 3:5, :]), 0.0)
    J[~moving, IPSI, IPSI] = 1.0
    joint = np.zeros((n, 9, 9))
    joint[:, :5, :5] = observer_cov
    joint[:, 5:, 5:] = rel_cov
    C = J @ joint @ J.transpose(0, 2, 1)
    return states, 0.5 * (C + C.transpose(0, 2, 1))


def rotate_stddevs_literal(psi: float, sigma_v) -> np.ndarray:
    """Componentwise rotation of standard deviations, evaluated literally.

    Kept for auditing only: rotating standard deviations (instead of the
    covariance) can yield negative entries, and the last row reuses the
    longitudinal velocity term.  Use
    :func:`propagate_covariance` for the actual pipeline.
    """
    sx, sy, spsi, svx, svy = (float(v) for v in sigma_v)
    c, s = math.cos(psi), math.sin(psi)
    return np.array(
        [
            c * sx - s * sy,
            s * sx + c * sy,
            spsi,
            c * svx - s * svy,
            s * svx + c * svx,
        ]
    )
