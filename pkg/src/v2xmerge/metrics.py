"""Per-run metrics computed from simulation logs.

Everything here is a pure function of its inputs so that metrics recomputed
from saved logs match the ones produced during the run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

HORIZONS = (1.0, 2.0, 3.0)
MATCH_RADIUS = 5.0

METRICS_HEADER = (
    "rate", "seed", "detected_ratio_mean", "loc_err_mean",
    "pred_lat_mae_1s", "pred_lat_mae_2s", "pred_lat_mae_3s",
    "pred_lon_mae_1s", "pred_lon_mae_2s", "pred_lon_mae_3s",
    "ax_mean", "ay_mean", "v_mean", "min_dist", "min_ttc",
)


class IncompleteRun(RuntimeError):
    """The ego never entered the main lane."""


def _xy(s) -> Tuple[float, float]:
    if hasattr(s, "x"):
        x = s.x
        if isinstance(x, np.ndarray):  # fusion track
            return float(x[0]), float(x[1])
        return float(s.x), float(s.y)
    return float(s[0]), float(s[1])


def match_tracks(snapshot: Iterable, ground_truth: Mapping[int, object],
                 match_radius: float = MATCH_RADIUS) -> Dict[int, Tuple[float, float]]:
    """Ground-truth vehicle id -> matched track position.

    Tracks carrying a vehicle id match that vehicle; anonymous tracks take
    the nearest still-unmatched vehicle within ``match_radius``.
    """
    matched: Dict[int, Tuple[float, float]] = {}
    anonymous = []
    for t in snapshot:
        vid = getattr(t, "vehicle_id", None)
        if vid is None:
            anonymous.append(_xy(t))
        elif vid in ground_truth:
            matched[vid] = _xy(t)
    for p in anonymous:
        best, best_d = None, match_radius
        for vid, s in sorted(ground_truth.items()):
            if vid in matched:
                continue
            gx, gy = _xy(s)
            d = math.hypot(p[0] - gx, p[1] - gy)
            if d <= best_d:
                best, best_d = vid, d
        if best is not None:
            matched[best] = p
    return matched


def vehicles_in_radius(ground_truth: Mapping[int, object], center, radius: float, exclude=()) -> Dict[int, object]:
    cx, cy = _xy(center)
    out = {}
    for vid, s in ground_truth.items():
        if vid in exclude:
            continue
        x, y = _xy(s)
        if math.hypot(x - cx, y - cy) <= radius:
            out[vid] = s
    return out


def detected_ratio(snapshot: Iterable, ground_truth: Mapping[int, object], center, radius: float = 400.0,
                   exclude=()) -> Optional[float]:
    """Share of ground-truth vehicles within ``radius`` of ``center`` that have a track; None if nobody is there."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    inside = vehicles_in_radius(ground_truth, center, radius, exclude)
    if not inside:
        return None
    return len(match_tracks(snapshot, inside)) / len(inside)


def localization_error(snapshot: Iterable, ground_truth: Mapping[int, object]) -> Dict[int, float]:
    """Euclidean position error per matched vehicle."""
    out = {}
    for vid, (x, y) in sorted(match_tracks(snapshot, ground_truth).items()):
        gx, gy = _xy(ground_truth[vid])
        out[vid] = math.hypot(x - gx, y - gy)
    return out


def ttc(ego, other, ego_length: float = 4.5, other_length: float = 4.5) -> Optional[float]:
    """Bumper distance over closing speed for a same-lane pair; None when not closing or overlapping."""
    front, back = (other, ego) if other.x >= ego.x else (ego, other)
    gap = abs(other.x - ego.x) - 0.5 * (ego_length + other_length)
    closing = back.vx - front.vx
    if closing <= 0 or gap <= 0:
        return None
    return gap / closing


@dataclass(frozen=True)
class PredictionErrors:
    """Signed lane-frame errors (predicted - true) per horizon."""

    lateral: Dict[float, np.ndarray]
    longitudinal: Dict[float, np.ndarray]

    def mae(self, horizon: float, axis: str = "lateral") -> float:
        e = (self.lateral if axis == "lateral" else self.longitudinal).get(horizon, np.empty(0))
        return float(np.mean(np.abs(e))) if len(e) else math.nan

    def summary(self, horizon: float, axis: str = "lateral") -> Tuple[float, float, float]:
        """(mean |e|, min |e|, max |e|)."""
        e = np.abs((self.lateral if axis == "lateral" else self.longitudinal).get(horizon, np.empty(0)))
        if not len(e):
            return math.nan, math.nan, math.nan
        return float(e.mean()), float(e.min()), float(e.max())


def prediction_error(rows: Iterable[Sequence[float]], horizons: Sequence[float] = HORIZONS) -> PredictionErrors:
    """Group ``(horizon, predicted x, predicted y, true x, true y)`` rows into per-horizon errors.

    The road is straight along world x, so longitudinal/lateral errors are
    the x/y differences.
    """
    lat: Dict[float, list] = {h: [] for h in horizons}
    lon: Dict[float, list] = {h: [] for h in horizons}
    for h, px, py, tx, ty in rows:
        if h in lat:
            lat[h].append(py - ty)
            lon[h].append(px - tx)
    return PredictionErrors({h: np.array(v) for h, v in lat.items()}, {h: np.array(v) for h, v in lon.items()})


@dataclass(frozen=True)
class DrivingSafety:
    ax_mean: float
    ay_mean: float
    v_mean: float
    min_dist: float
    min_ttc: float  # nan when no closing same-lane pair occurred


@dataclass(frozen=True)
class EgoSample:
    clock: float
    x: float
    y: float
    vx: float
    vy: float
    ax: float
    ay: float
    lane: int
    gap_ahead: float  # nearest same-lane bumper distance, inf if none
    gap_behind: float
    ttc: float  # smallest same-lane ttc, inf if undefined


def merge_window(samples: Sequence[EgoSample], target_lane: int, after: float = 5.0) -> Tuple[float, float]:
    """From the first logged planner tick to ``after`` seconds past the first tick in the target lane."""
    if not samples:
        raise IncompleteRun("empty ego log")
    crossing = next((s.clock for s in samples if s.lane == target_lane), None)
    if crossing is None:
        raise IncompleteRun("the ego never entered the target lane")
    return samples[0].clock, crossing + after


def driving_safety_params(samples: Sequence[EgoSample], target_lane: int, after: float = 5.0) -> DrivingSafety:
    t0, t1 = merge_window(samples, target_lane, after)
    win = [s for s in samples if t0 - 1e-9 <= s.clock <= t1 + 1e-9]
    ax = np.array([abs(s.ax) for s in win])
    ay = np.array([abs(s.ay) for s in win])
    v = np.array([math.hypot(s.vx, s.vy) for s in win])
    dist = min(min(s.gap_ahead, s.gap_behind) for s in win)
    t = min(s.ttc for s in win)
    return DrivingSafety(float(ax.mean()), float(ay.mean()), float(v.mean()), float(dist),
                         float(t) if math.isfinite(t) else math.nan)


@dataclass
class MetricsRecord:
    run_id: str
    rate: float
    seed: int
    detected_ratios: List[float] = field(default_factory=list)
    loc_errors: List[float] = field(default_factory=list)
    predictions: Optional[PredictionErrors] = None
    driving: Optional[DrivingSafety] = None
    error: str = ""

    def __post_init__(self):
        if any(not 0.0 <= r <= 1.0 for r in self.detected_ratios):
            raise ValueError("detected ratios lie in [0, 1]")

    @property
    def detected_ratio_mean(self) -> float:
        return float(np.mean(self.detected_ratios)) if self.detected_ratios else math.nan

    def detected_ratio_quartiles(self) -> Tuple[float, float]:
        if not self.detected_ratios:
            return math.nan, math.nan
        q = np.quantile(self.detected_ratios, [0.25, 0.75])
        return float(q[0]), float(q[1])

    @property
    def loc_err_mean(self) -> float:
        return float(np.mean(self.loc_errors)) if self.loc_errors else math.nan

    def row(self) -> list:
        p = self.predictions
        lat = [p.mae(h, "lateral") if p else math.nan for h in HORIZONS]
        lon = [p.mae(h, "longitudinal") if p else math.nan for h in HORIZONS]
        d = self.driving
        drive = [d.ax_mean, d.ay_mean, d.v_mean, d.min_dist, d.min_ttc] if d else [math.nan] * 5
        return [self.rate, self.seed, self.detected_ratio_mean, self.loc_err_mean, *lat, *lon, *drive]


def format_value(v) -> str:
    """Shortest round-tripping text for numbers; ``nan`` stays ``nan``."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)
