"""Trajectory records, road layout, run configuration and the replay clock."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geo import Body, VehicleState

CSV_COLUMNS = ("frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity", "laneId")

SOLID = "solid"
DASHED = "dashed"


class ScenarioError(ValueError):
    pass


class MalformedRow(ScenarioError):
    def __init__(self, row_index: int, message: str):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class DuplicateRecord(ScenarioError):
    pass


class MissingColumn(ScenarioError):
    pass


class ConfigError(ScenarioError):
    pass


class ClockOutOfRange(ScenarioError):
    pass


@dataclass(frozen=True)
class TrajectoryRecord:
    frame: int
    vehicle_id: int
    x: float
    y: float
    width: float
    height: float
    x_velocity: float
    y_velocity: float
    lane_id: int


def _fmt(v: float) -> str:
    # shortest round-trip repr, never fewer than 2 decimals
    return np.format_float_positional(float(v), unique=True, trim="k", min_digits=2)


def parse_trajectory_csv(path) -> List[TrajectoryRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_trajectory_rows(csv.reader(fh))


def parse_trajectory_rows(rows: Iterable[Sequence[str]]) -> List[TrajectoryRecord]:
    it = iter(rows)
    try:
        header = [h.strip() for h in next(it)]
    except StopIteration:
        raise MissingColumn("empty file, header row missing") from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"missing columns: {', '.join(missing)}")
    col = {name: header.index(name) for name in CSV_COLUMNS}

    records = []
    seen = set()
    for idx, row in enumerate(it):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            frame = int(row[col["frame"]])
            vid = int(row[col["id"]])
            lane = int(row[col["laneId"]])
            vals = [float(row[col[c]]) for c in ("x", "y", "width", "height", "xVelocity", "yVelocity")]
        except (ValueError, IndexError) as exc:
            raise MalformedRow(idx, str(exc)) from None
        if not all(math.isfinite(v) for v in vals):
            raise MalformedRow(idx, "non-finite value")
        if frame < 0:
            raise MalformedRow(idx, "negative frame")
        if vals[2] <= 0 or vals[3] <= 0:
            raise MalformedRow(idx, "width and height must be positive")
        key = (frame, vid)
        if key in seen:
            raise DuplicateRecord(f"duplicate record for frame {frame}, vehicle {vid}")
        seen.add(key)
        records.append(TrajectoryRecord(frame, vid, vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], lane))
    records.sort(key=lambda r: (r.frame, r.vehicle_id))
    return records


def write_trajectory_csv(path, records: Iterable[TrajectoryRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in sorted(records, key=lambda r: (r.frame, r.vehicle_id)):
            w.writerow(
                [
                    r.frame,
                    r.vehicle_id,
                    _fmt(r.x),
                    _fmt(r.y),
                    _fmt(r.width),
                    _fmt(r.height),
                    _fmt(r.x_velocity),
                    _fmt(r.y_velocity),
                    r.lane_id,
                ]
            )


# --------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class RoadLayout:
    """Straight multi-lane road with a parallel acceleration lane.

    Lanes are numbered 1..lane_count from right to left.  ``markings`` lists
    the boundary types from the rightmost road edge to the leftmost one, so
    lane ``i`` lies between boundaries ``i-1`` (right) and ``i`` (left).
    """

    lane_count: int
    lane_width: float
    lane_centers: Tuple[float, ...]
    markings: Tuple[str, ...]
    ramp_lane_id: int
    ramp_start_x: float
    ramp_end_x: float

    def __post_init__(self):
        object.__setattr__(self, "lane_centers", tuple(float(c) for c in self.lane_centers))
        object.__setattr__(self, "markings", tuple(self.markings))
        if self.lane_width <= 2.5:
            raise ConfigError("lane_width must exceed 2.5 m")
        if len(self.lane_centers) != self.lane_count:
            raise ConfigError("lane_centers must list one offset per lane")
        if len(self.markings) != self.lane_count + 1:
            raise ConfigError("markings must list lane_count + 1 boundaries")
        if any(m not in (SOLID, DASHED) for m in self.markings):
            raise ConfigError("marking types are 'solid' or 'dashed'")
        if any(b <= a for a, b in zip(self.lane_centers, self.lane_centers[1:])):
            raise ConfigError("lane_centers must increase from right to left")
        if not 1 <= self.ramp_lane_id <= self.lane_count:
            raise ConfigError("ramp_lane_id out of range")
        if not self.ramp_start_x < self.ramp_end_x:
            raise ConfigError("ramp_start_x must be < ramp_end_x")

    @classmethod
    def default(cls) -> "RoadLayout":
        w = 3.75
        return cls(3, w, (-w, 0.0, w), (SOLID, DASHED, DASHED, SOLID), 1, 100.0, 400.0)

    @property
    def merge_target_lane(self) -> int:
        """Main lane adjacent to the ramp."""
        return self.ramp_lane_id + 1 if self.ramp_lane_id < self.lane_count else self.ramp_lane_id - 1

    @property
    def ramp_is_right(self) -> bool:
        return self.merge_target_lane > self.ramp_lane_id

    def center(self, lane_id: int) -> float:
        return self.lane_centers[lane_id - 1]

    def right_boundary(self, lane_id: int) -> float:
        return self.center(lane_id) - 0.5 * self.lane_width

    def left_boundary(self, lane_id: int) -> float:
        return self.center(lane_id) + 0.5 * self.lane_width

    def left_marking(self, lane_id: int) -> str:
        return self.markings[lane_id]

    def right_marking(self, lane_id: int) -> str:
        return self.markings[lane_id - 1]

    def lane_at(self, y: float) -> Optional[int]:
        half = 0.5 * self.lane_width
        for i, c in enumerate(self.lane_centers, start=1):
            if c - half <= y < c + half:
                return i
        return None

    def has_lane(self, lane_id: int) -> bool:
        return 1 <= lane_id <= self.lane_count

    def lane_change_legal(self, lane_id: int, direction: int, x: float) -> bool:
        """Whether a change from ``lane_id`` to ``lane_id + direction`` is allowed at ``x``.

        Leaving the ramp is only allowed along the acceleration lane; main
        lane traffic may not move onto the ramp.
        """
        target = lane_id + direction
        if not self.has_lane(target):
            return False
        boundary = self.markings[lane_id] if direction > 0 else self.markings[lane_id - 1]
        if boundary != DASHED:
            return False
        if target == self.ramp_lane_id:
            return False
        if lane_id == self.ramp_lane_id:
            return self.ramp_start_x <= x <= self.ramp_end_x
        return True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lane_centers"] = list(self.lane_centers)
        d["markings"] = list(self.markings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoadLayout":
        _check_keys(d, cls, "layout")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _check_keys(d: dict, klass, what: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a key-value object")
    known = {f.name for f in fields(klass)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(unknown)}")


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_layout(path) -> RoadLayout:
    return RoadLayout.from_dict(load_json(path))


def save_layout(path, layout: RoadLayout) -> None:
    Path(path).write_text(json.dumps(layout.to_dict(), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class ScenarioConfig:
    penetration_rate: float = 0.0
    rng_seed: int = 0
    timestep: float = 0.02
    comm_delay: float = 0.05
    message_period: float = 0.1
    comms_range: float = 400.0
    sensor_suite: str = "default"
    ego_vehicle_id: int = 0
    metrics_radius: float = 400.0
    # channel and self-localisation
    drop_probability: float = 0.0
    delay_jitter: float = 0.0
    ego_equipped: bool = True
    cam_position_noise: float = 0.2
    cam_heading_noise: float = 0.01
    cam_velocity_noise: float = 0.1
    # perception and prediction
    occlusion: bool = True
    sensor_ids_known: bool = True
    predictor: str = "rbb"
    # run length
    duration: float = 40.0
    frame_period: float = 0.04

    def __post_init__(self):
        if not 0.0 <= self.penetration_rate <= 1.0:
            raise ConfigError("penetration_rate must be in [0, 1]")
        if self.timestep <= 0:
            raise ConfigError("timestep must be > 0")
        ratio = self.message_period / self.timestep
        if self.message_period <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("message_period must be a positive multiple of timestep")
        if self.comm_delay < 0 or self.delay_jitter < 0:
            raise ConfigError("comm_delay and delay_jitter must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop_probability must be in [0, 1]")
        if self.comms_range <= 0 or self.metrics_radius <= 0:
            raise ConfigError("comms_range and metrics_radius must be > 0")
        if self.predictor not in ("rbb", "vlk"):
            raise ConfigError("predictor must be 'rbb' or 'vlk'")
        if self.duration <= 0 or self.frame_period <= 0:
            raise ConfigError("duration and frame_period must be > 0")

    @property
    def message_ticks(self) -> int:
        return int(round(self.message_period / self.timestep))

    def replace(self, **changes) -> "ScenarioConfig":
        d = asdict(self)
        d.update(changes)
        return ScenarioConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        _check_keys(d, cls, "config")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def config_hash(self) -> str:
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(load_json(path))


# --------------------------------------------------------------------------
# equipment


def assign_v2x_equipment(vehicle_ids: Iterable[int], rate: float, seed: int, exclude: Iterable[int] = ()) -> frozenset:
    """Seeded subset of ``round(rate * N)`` equipped vehicles.

    The subset is a prefix of one seeded permutation, so for a fixed seed the
    equipped sets are nested as the rate grows.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    skip = set(exclude)
    ids = sorted(set(int(v) for v in vehicle_ids) - skip)
    n = math.floor(rate * len(ids) + 0.5)
    perm = np.random.default_rng(seed).permutation(len(ids))
    return frozenset(ids[i] for i in perm[:n])


# --------------------------------------------------------------------------
# replay


@dataclass
class Scenario:
    records: List[TrajectoryRecord]
    layout: RoadLayout
    name: str = "scenario"

    @property
    def vehicle_ids(self) -> List[int]:
        return sorted({r.vehicle_id for r in self.records})


def load_scenario(path) -> Scenario:
    """Load a scenario manifest ``{"trajectories": <csv>, "layout": <json>}``."""
    path = Path(path)
    manifest = load_json(path)
    if not isinstance(manifest, dict) or set(manifest) - {"trajectories", "layout", "name"}:
        raise ConfigError("scenario manifest keys are 'trajectories', 'layout' and optional 'name'")
    try:
        csv_path = path.parent / manifest["trajectories"]
        layout_path = path.parent / manifest["layout"]
    except KeyError as exc:
        raise ConfigError(f"scenario manifest lacks {exc}") from None
    records = parse_trajectory_csv(csv_path)
    return Scenario(records, load_layout(layout_path), manifest.get("name", path.stem))


class Replay:
    """Ground truth of recorded vehicles at arbitrary clock values.

    Frames are ``frame_period`` apart; in-between clocks interpolate linearly.
    """

    _FIELDS = ("x", "y", "x_velocity", "y_velocity")

    def __init__(self, records: Sequence[TrajectoryRecord], frame_period: float = 0.04):
        if not records:
            raise ScenarioError("no trajectory records")
        self.frame_period = frame_period
        self.ids = sorted({r.vehicle_id for r in records})
        col = {vid: i for i, vid in enumerate(self.ids)}
        self.first_frame = min(r.frame for r in records)
        self.last_frame = max(r.frame for r in records)
        nf = self.last_frame - self.first_frame + 1
        self._data = np.full((nf, len(self.ids), 4), np.nan)
        self._dims = np.zeros((len(self.ids), 2))
        self._lane = np.zeros((nf, len(self.ids)), dtype=int)
        for r in records:
            f = r.frame - self.first_frame
            j = col[r.vehicle_id]
            self._data[f, j] = (r.x, r.y, r.x_velocity, r.y_velocity)
            self._lane[f, j] = r.lane_id
            # highD stores the footprint along the road as 'width'
            self._dims[j] = (r.width, r.height)
        self._present = ~np.isnan(self._data[:, :, 0])

    @property
    def t_start(self) -> float:
        return self.first_frame * self.frame_period

    @property
    def t_end(self) -> float:
        return self.last_frame * self.frame_period

    def dense(self):
        """``(values[frame, vehicle, (x, y, vx, vy)], present, lane_id)`` with frames from ``first_frame``."""
        return self._data, self._present, self._lane

    def dims(self, vehicle_id: int) -> Tuple[float, float]:
        length, width = self._dims[self.ids.index(vehicle_id)]
        return float(length), float(width)

    def vehicle_span(self, vehicle_id: int) -> Tuple[float, float]:
        j = self.ids.index(vehicle_id)
        frames = np.flatnonzero(self._present[:, j])
        return (
            (frames[0] + self.first_frame) * self.frame_period,
            (frames[-1] + self.first_frame) * self.frame_period,
        )

    def step_arrays(self, clock: float):
        """Vectorised ``(ids, values[n, 4], present[n])`` at ``clock``."""
        pos = clock / self.frame_period - self.first_frame
        nf = self._data.shape[0]
        if pos < -1e-9 or pos > nf - 1 + 1e-9:
            raise ClockOutOfRange(f"clock {clock} outside [{self.t_start}, {self.t_end}]")
        pos = min(max(pos, 0.0), nf - 1)
        f0 = int(math.floor(pos + 1e-9))
        frac = pos - f0
        if frac < 1e-9 or f0 >= nf - 1:
            f0 = min(f0, nf - 1)
            return self._data[f0], self._present[f0]
        a, b = self._data[f0], self._data[f0 + 1]
        present = self._present[f0] & self._present[f0 + 1]
        return a + frac * (b - a), present

    def replay_step(self, clock: float) -> Dict[int, VehicleState]:
        vals, present = self.step_arrays(clock)
        out = {}
        for j in np.flatnonzero(present):
            x, y, vx, vy = vals[j]
            psi = math.atan2(vy, vx) if math.hypot(vx, vy) >= 0.1 else 0.0
            out[self.ids[j]] = VehicleState(x, y, psi, vx, vy)
        return out

    def bodies(self, clock: float) -> Dict[int, Body]:
        return {
            vid: Body(vid, st, *self.dims(vid)) for vid, st in self.replay_step(clock).items()
        }
