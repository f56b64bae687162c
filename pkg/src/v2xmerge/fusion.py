"""Extended environment model: per-object EKF tracks fed by local sensors and V2X."""

from __future__ import annotations

import csv
import math
import copy
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geo import (
    HEADING_SPEED_FLOOR,
    IPSI,
    STATE_DIM,
    VehicleState,
    compose_measurement,
    normalize_angle,
    propagate_covariance,
    symmetrize,
)
from .sensors import Detection
from .v2x import Role, V2xMessage

SOURCE_SENSOR = "sensor"
SOURCE_CAM = "cam"
SOURCE_CPM = "cpm"

# local sensors observe position and velocity only
SENSOR_COMPONENTS = (0, 1, 3, 4)
ALL_COMPONENTS = (0, 1, 2, 3, 4)

R_FLOOR = 1e-9


class SingularInnovationCovariance(ArithmeticError):
    pass


class StaleMessage(Exception):
    pass


@dataclass(frozen=True)
class EkfConfig:
    q_diag: Tuple[float, ...] = (0.1, 0.1, 0.01, 0.5, 0.5)
    r_sensor: Tuple[float, ...] = (0.25, 0.25, 0.04, 0.04)
    r_cam: Tuple[float, ...] = (0.04, 0.04, 1e-4, 0.01, 0.01)
    gate: float = 3.0
    stale_timeout: float = 1.0
    init_heading_var: float = 0.05
    accel_time_constant: float = 1.0

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)


def _evolve(track: "Track", **changes) -> "Track":
    # cheaper than dataclasses.replace on the per-measurement hot path
    out = copy.copy(track)
    for k, v in changes.items():
        object.__setattr__(out, k, v)
    return out


@dataclass(frozen=True, eq=False)
class Track:
    track_id: int
    vehicle_id: Optional[int]
    x: np.ndarray  # (x, y, psi, vx, vy)
    P: np.ndarray
    stamp: float  # time the estimate refers to
    last_update: float
    equipped: bool = False
    role: Role = Role.UNKNOWN
    age: float = 0.0
    accel: float = 0.0  # smoothed longitudinal acceleration
    innovation: Optional[np.ndarray] = None
    length: float = 4.5

    @property
    def state(self) -> VehicleState:
        return VehicleState.from_array(self.x)

    @property
    def cov(self) -> np.ndarray:
        return self.P


def motion_model(x: np.ndarray, dt: float) -> np.ndarray:
    """Constant world velocity; heading follows the velocity direction."""
    out = np.array(x, dtype=float)
    out[0] += x[3] * dt
    out[1] += x[4] * dt
    if math.hypot(x[3], x[4]) >= HEADING_SPEED_FLOOR:
        out[IPSI] = math.atan2(x[4], x[3])
    return out


def motion_jacobian(x: np.ndarray, dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 3] = dt
    F[1, 4] = dt
    vx, vy = x[3], x[4]
    s2 = vx * vx + vy * vy
    if math.sqrt(s2) >= HEADING_SPEED_FLOOR:
        F[IPSI, IPSI] = 0.0
        F[IPSI, 3] = -vy / s2
        F[IPSI, 4] = vx / s2
    return F


def propagate_gaussian(x: np.ndarray, P: np.ndarray, dt: float, Q: np.ndarray):
    if dt == 0:
        return np.array(x, dtype=float), np.array(P, dtype=float)
    F = motion_jacobian(x, dt)
    return motion_model(x, dt), symmetrize(F @ P @ F.T + Q * dt)


def ekf_predict(track: Track, dt: float, config: EkfConfig = EkfConfig()) -> Track:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return track
    x, P = propagate_gaussian(track.x, track.P, dt, config.Q)
    return _evolve(track, x=x, P=P, stamp=track.stamp + dt, age=track.age + dt)


def ekf_update(track: Track, z: np.ndarray, R: np.ndarray, components: Sequence[int] = ALL_COMPONENTS,
               config: EkfConfig = EkfConfig()) -> Track:
    """EKF correction with ``h`` selecting ``components`` of the state."""
    idx = list(components)
    z = np.asarray(z, dtype=float)
    R = np.asarray(R, dtype=float) + R_FLOOR * np.eye(len(idx))
    P0 = track.P
    y = z - track.x[idx]
    if IPSI in idx:
        k = idx.index(IPSI)
        y[k] = normalize_angle(y[k])
    full = len(idx) == STATE_DIM
    PHt = P0 if full else P0[:, idx]  # P H^T, with H selecting rows of the identity
    S = symmetrize((P0 if full else PHt[idx]) + R)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularInnovationCovariance("innovation covariance is not positive definite") from None
    if np.min(np.diag(L)) ** 2 < 1e-300:
        raise SingularInnovationCovariance("innovation covariance is singular")
    Linv = np.linalg.inv(L)
    K = PHt @ (Linv.T @ Linv)
    x = track.x + K @ y
    x[IPSI] = normalize_angle(x[IPSI])
    if full:
        IKH = np.eye(STATE_DIM) - K
    else:
        IKH = np.eye(STATE_DIM)
        IKH[:, idx] -= K
    P = symmetrize(IKH @ P0 @ IKH.T + K @ R @ K.T)
    return _evolve(track, x=x, P=P, innovation=y)


def propagate_many(X: np.ndarray, P: np.ndarray, dt: float, Q: np.ndarray):
    """:func:`propagate_gaussian` over stacked states (n, 5) and covariances (n, 5, 5)."""
    n = len(X)
    F = np.broadcast_to(np.eye(STATE_DIM), (n, STATE_DIM, STATE_DIM)).copy()
    F[:, 0, 3] = F[:, 1, 4] = dt
    vx, vy = X[:, 3], X[:, 4]
    s2 = vx * vx + vy * vy
    moving = np.sqrt(s2) >= HEADING_SPEED_FLOOR
    safe = np.where(moving, s2, 1.0)
    F[moving, IPSI, IPSI] = 0.0
    F[:, IPSI, 3] = np.where(moving, -vy / safe, 0.0)
    F[:, IPSI, 4] = np.where(moving, vx / safe, 0.0)
    Xn = X.copy()
    Xn[:, 0] += vx * dt
    Xn[:, 1] += vy * dt
    Xn[:, IPSI] = np.where(moving, np.arctan2(vy, vx), X[:, IPSI])
    Pn = F @ P @ F.transpose(0, 2, 1) + Q * dt
    return Xn, 0.5 * (Pn + Pn.transpose(0, 2, 1))


def update_many(X: np.ndarray, P: np.ndarray, Z: np.ndarray, R: np.ndarray):
    """Full-state :func:`ekf_update` over stacked tracks; returns ``(X, P, innovations)``."""
    eye = np.eye(STATE_DIM)
    R = R + R_FLOOR * eye
    Y = Z - X
    Y[:, IPSI] = np.pi - (np.pi - Y[:, IPSI]) % (2.0 * np.pi)
    S = P + R
    S = 0.5 * (S + S.transpose(0, 2, 1))
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularInnovationCovariance("innovation covariance is not positive definite") from None
    K = np.linalg.solve(S, P).transpose(0, 2, 1)  # P S^-1 with both symmetric
    Xn = X + np.einsum("nij,nj->ni", K, Y)
    Xn[:, IPSI] = np.pi - (np.pi - Xn[:, IPSI]) % (2.0 * np.pi)
    IKH = eye - K
    Pn = IKH @ P @ IKH.transpose(0, 2, 1) + K @ R @ K.transpose(0, 2, 1)
    return Xn, 0.5 * (Pn + Pn.transpose(0, 2, 1)), Y


def mahalanobis_position(track: Track, z: np.ndarray, R: np.ndarray) -> float:
    d = np.asarray(z[:2]) - track.x[:2]
    S = track.P[:2, :2] + np.asarray(R)[:2, :2] + R_FLOOR * np.eye(2)
    return float(math.sqrt(d @ np.linalg.solve(S, d)))


NEW_TRACK = None


def associate(vehicle_id: Optional[int], z: np.ndarray, R: np.ndarray, tracks: Iterable[Track],
              gate: float = 3.0) -> Optional[int]:
    """Track id for a measurement, or ``NEW_TRACK``.

    Identified measurements match on vehicle id; anonymous ones take the
    nearest track by position Mahalanobis distance inside ``gate``.
    """
    tracks = list(tracks)
    if vehicle_id is not None:
        for t in tracks:
            if t.vehicle_id == vehicle_id:
                return t.track_id
        return NEW_TRACK
    best, best_d = NEW_TRACK, gate
    for t in tracks:
        d = mahalanobis_position(t, z, R)
        if d <= best_d:
            best, best_d = t.track_id, d
    return best


def _initial_covariance(z: np.ndarray, R: np.ndarray, components, config: EkfConfig) -> Tuple[np.ndarray, np.ndarray]:
    x = np.zeros(STATE_DIM)
    P = np.zeros((STATE_DIM, STATE_DIM))
    idx = list(components)
    x[idx] = z
    P[np.ix_(idx, idx)] = R
    if IPSI not in idx:
        vx, vy = x[3], x[4]
        s2 = vx * vx + vy * vy
        if math.sqrt(s2) >= HEADING_SPEED_FLOOR:
            x[IPSI] = math.atan2(vy, vx)
            g = np.array([-vy / s2, vx / s2])
            P[IPSI, IPSI] = g @ P[3:5, 3:5] @ g + R_FLOOR
            P[IPSI, 3:5] = P[3:5, 3:5] @ g
            P[3:5, IPSI] = P[IPSI, 3:5]
        else:
            P[IPSI, IPSI] = config.init_heading_var
    P += R_FLOOR * np.eye(STATE_DIM)
    return x, symmetrize(P)


@dataclass
class Snapshot:
    """Immutable view of the environment model at ``clock``."""

    clock: float
    tracks: Tuple[Track, ...]

    def __iter__(self):
        return iter(self.tracks)

    def __len__(self):
        return len(self.tracks)

    def by_vehicle(self) -> Dict[int, Track]:
        return {t.vehicle_id: t for t in self.tracks if t.vehicle_id is not None}

    def get(self, track_id: int) -> Optional[Track]:
        for t in self.tracks:
            if t.track_id == track_id:
                return t
        return None


class EnvironmentModel:
    """Tracks of one (ego) vehicle.

    Track ids come from their own allocator starting far above any vehicle
    id, so they never collide with vehicle ids.
    """

    TRACK_ID_BASE = 1 << 24

    def __init__(self, owner_id: Optional[int] = None, config: EkfConfig = EkfConfig(), length: float = 4.5):
        self.owner_id = owner_id
        self.config = config
        self.default_length = length
        self.tracks: Dict[int, Track] = {}
        self._next_id = self.TRACK_ID_BASE
        self.last_sequence: Dict[int, int] = {}
        self.stale_count = 0
        self.clock = 0.0

    # -- internals
    def _new_track(self, vehicle_id, z, R, components, t, equipped=False, role=Role.UNKNOWN) -> Track:
        x, P = _initial_covariance(z, R, components, self.config)
        tr = Track(self._next_id, vehicle_id, x, P, t, t, equipped, role, length=self.default_length)
        self.tracks[tr.track_id] = tr
        self._next_id += 1
        return tr

    def _predict_all(self, t: float) -> None:
        for tid, tr in list(self.tracks.items()):
            if tr.stamp < t:
                self.tracks[tid] = ekf_predict(tr, t - tr.stamp, self.config)

    def _apply(self, vehicle_id, z, R, components, meas_time: float, t: float, **attrs) -> Track:
        """Fuse a measurement taken at ``meas_time`` into the model at time ``t``."""
        cfg = self.config
        idx = list(components)
        full = len(idx) == STATE_DIM
        if t > meas_time and full:
            z, R = propagate_gaussian(np.asarray(z, dtype=float), np.asarray(R, dtype=float), t - meas_time, cfg.Q)
        elif t > meas_time:
            # shift the measurement to the fusion time with the motion model
            zf = np.zeros(STATE_DIM)
            Rf = np.zeros((STATE_DIM, STATE_DIM))
            zf[idx] = z
            Rf[np.ix_(idx, idx)] = R
            if IPSI not in idx:
                zf[IPSI] = math.atan2(zf[4], zf[3]) if math.hypot(zf[3], zf[4]) >= HEADING_SPEED_FLOOR else 0.0
            zf, Rf = propagate_gaussian(zf, Rf, t - meas_time, cfg.Q)
            z, R = zf[idx], Rf[np.ix_(idx, idx)]
        # position comes first in both component layouts
        tid = associate(vehicle_id, z, R, self.tracks.values(), cfg.gate)
        if tid is NEW_TRACK:
            return self._new_track(vehicle_id, z, R, components, t, **attrs)
        tr = self.tracks[tid]
        if tr.stamp < t:
            tr = ekf_predict(tr, t - tr.stamp, cfg)
        prev_vx, prev_t = tr.x[3], tr.last_update
        tr = ekf_update(tr, z, R, components, cfg)
        if t > prev_t:
            a_inst = (tr.x[3] - prev_vx) / (t - prev_t)
            w = min(1.0, (t - prev_t) / cfg.accel_time_constant)
            tr = _evolve(tr, accel=(1 - w) * tr.accel + w * a_inst)
        tr = _evolve(tr, last_update=max(t, tr.last_update), **attrs)
        self.tracks[tid] = tr
        return tr

    # -- public API
    def ingest_detections(self, detections: Sequence[Detection], observer: VehicleState,
                          observer_cov: np.ndarray, clock: float) -> None:
        """Fuse the owner's own sensor detections (position + velocity)."""
        self._predict_all(clock)
        self.clock = max(self.clock, clock)
        for d in detections:
            m = d.measurement
            if m.target_id is not None and m.target_id == self.owner_id:
                continue
            w = compose_measurement(observer, m)
            C = propagate_covariance(observer, m, observer_cov)
            idx = list(SENSOR_COMPONENTS)
            self._apply(m.target_id, w.as_array()[idx], C[np.ix_(idx, idx)], SENSOR_COMPONENTS, m.timestamp,
                        max(clock, m.timestamp))

    def ingest_message(self, msg: V2xMessage, receive_time: float) -> None:
        if receive_time < msg.generation_time:
            raise ValueError("receive_time precedes generation_time")
        last = self.last_sequence.get(msg.sender_id)
        if last is not None and msg.sequence <= last:
            self.stale_count += 1
            raise StaleMessage(f"sender {msg.sender_id}: sequence {msg.sequence} <= {last}")
        self.last_sequence[msg.sender_id] = msg.sequence
        self._predict_all(receive_time)
        self.clock = max(self.clock, receive_time)
        g = msg.generation_time
        if msg.sender_id != self.owner_id:
            self._apply(msg.sender_id, msg.sender_state.as_array(), msg.sender_cov, ALL_COMPONENTS, g,
                        receive_time, equipped=True, role=msg.role)
        objs = [o for o in msg.perceived if o.target_id is None or o.target_id != self.owner_id]
        if not objs:
            return
        Z = np.array([o.state.as_array() for o in objs])
        R = np.array([o.cov for o in objs])
        if receive_time > g:
            Z, R = propagate_many(Z, R, receive_time - g, self.config.Q)
        # identified objects with a track are fused together; they hit distinct tracks
        by_vehicle = {tr.vehicle_id: tid for tid, tr in self.tracks.items() if tr.vehicle_id is not None}
        batch = [i for i, o in enumerate(objs) if o.target_id is not None and o.target_id in by_vehicle]
        if batch:
            self._update_many([by_vehicle[objs[i].target_id] for i in batch], Z[batch], R[batch], receive_time)
        done = set(batch)
        for i, o in enumerate(objs):
            if i not in done:
                self._apply(o.target_id, Z[i], R[i], ALL_COMPONENTS, receive_time, receive_time)

    def _update_many(self, tids: Sequence[int], Z: np.ndarray, R: np.ndarray, t: float) -> None:
        """Full-state EKF update of several distinct tracks already predicted to ``t``."""
        cfg = self.config
        tracks = [self.tracks[tid] for tid in tids]
        X = np.array([tr.x for tr in tracks])
        P = np.array([tr.P for tr in tracks])
        X, P, Y = update_many(X, P, Z, R)
        for tid, tr, x, Pn, y in zip(tids, tracks, X, P, Y):
            accel = tr.accel
            if t > tr.last_update:
                w = min(1.0, (t - tr.last_update) / cfg.accel_time_constant)
                accel = (1 - w) * accel + w * (x[3] - tr.x[3]) / (t - tr.last_update)
            self.tracks[tid] = _evolve(tr, x=x, P=Pn, innovation=y, accel=accel, last_update=max(t, tr.last_update))

    def prune_and_snapshot(self, clock: float) -> Snapshot:
        timeout = self.config.stale_timeout
        for tid in [tid for tid, t in self.tracks.items() if clock - t.last_update > timeout]:
            del self.tracks[tid]
        out = []
        for tid in sorted(self.tracks):
            tr = self.tracks[tid]
            if tr.stamp < clock:
                tr = ekf_predict(tr, clock - tr.stamp, self.config)
            out.append(tr)
        return Snapshot(clock, tuple(out))


TRACK_LOG_HEADER = ("clock", "track_id", "vehicle_id", "x", "y", "psi", "vx", "vy", "trace_P", "equipped", "role")


def track_log_rows(snapshot: Snapshot) -> List[list]:
    rows = []
    for t in snapshot.tracks:
        rows.append([
            f"{snapshot.clock:.3f}", t.track_id, "" if t.vehicle_id is None else t.vehicle_id,
            f"{t.x[0]:.4f}", f"{t.x[1]:.4f}", f"{t.x[2]:.5f}", f"{t.x[3]:.4f}", f"{t.x[4]:.4f}",
            f"{np.trace(t.P):.6f}", int(t.equipped), t.role.name.lower(),
        ])
    return rows


def write_track_log(path, rows: Iterable[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_LOG_HEADER)
        w.writerows(rows)
