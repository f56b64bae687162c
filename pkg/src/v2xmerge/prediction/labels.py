from __future__ import annotations

from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

from ..scenario import RoadLayout, TrajectoryRecord

LCL, FLW, LCR = 0, 1, 2
MANEUVERS = ("LCL", "FLW", "LCR")

LABEL_WINDOW = 5.0


def lane_crossings(track: Sequence[TrajectoryRecord], frame_period: float) -> List[Tuple[float, int]]:
    """``(time, label)`` of every confirmed lane change along one vehicle's records.

    A lane-id step only counts when the lateral displacement has the same
    sign as the step (higher lane ids lie to the left).
    """
    out = []
    for a, b in zip(track, track[1:]):
        if b.lane_id == a.lane_id:
            continue
        step = b.lane_id - a.lane_id
        dy = b.y - a.y
        if step * dy <= 0:
            continue
        out.append((b.frame * frame_period, LCL if step > 0 else LCR))
    return out


def label_maneuvers(records: Sequence[TrajectoryRecord], layout: RoadLayout = None,
                    frame_period: float = 0.04, window: float = LABEL_WINDOW) -> Dict[Tuple[int, int], int]:
    """Maneuver label per ``(vehicle_id, frame)``.

    A sample is LCL/LCR when the vehicle's next lane crossing happens in that
    direction within ``window`` seconds, otherwise FLW.
    """
    per_vehicle = defaultdict(list)
    for r in records:
        per_vehicle[r.vehicle_id].append(r)
    labels = {}
    for vid, track in per_vehicle.items():
        track.sort(key=lambda r: r.frame)
        crossings = lane_crossings(track, frame_period)
        ci = 0
        for r in track:
            t = r.frame * frame_period
            while ci < len(crossings) and crossings[ci][0] <= t + 1e-9:
                ci += 1
            label = FLW
            if ci < len(crossings) and crossings[ci][0] - t <= window + 1e-9:
                label = crossings[ci][1]
            labels[(vid, r.frame)] = label
    return labels
