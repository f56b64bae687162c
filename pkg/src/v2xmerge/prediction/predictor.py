"""Position prediction: the two-stage role-based model and the VLK baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from ..scenario import RoadLayout
from ..v2x import Role
from .features import F_AX, F_OWN_LEAD_DV, F_OWN_LEAD_DX, F_VX, AgentView, as_agent, extract_features
from .gmm import GmmModel, Mixture1D, gmr_condition
from .labels import FLW, LCL, LCR
from .mlp import ManeuverProbabilities, MlpModel

MAX_HORIZON = 5.0

LONGITUDINAL_FEATURES = (F_VX, F_AX, F_OWN_LEAD_DX, F_OWN_LEAD_DV)


class ModelMissing(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictionModel:
    """Maneuver classifier plus one lateral expert per maneuver and one longitudinal expert.

    Lateral experts regress the lateral displacement from
    ``[offset from lane center, vy, horizon]``; the longitudinal expert
    regresses the mean speed over the horizon minus the current speed from
    ``[vx, ax, lead gap, lead relative speed, horizon]``.
    """

    mlp: MlpModel
    lateral: Tuple[GmmModel, GmmModel, GmmModel]  # LCL, FLW, LCR
    longitudinal: GmmModel

    def __post_init__(self):
        if len(self.lateral) != 3:
            raise ValueError("one lateral expert per maneuver is required")


def lateral_inputs(offsets, vy) -> np.ndarray:
    return np.column_stack([np.asarray(offsets, dtype=float), np.asarray(vy, dtype=float)])


def longitudinal_inputs(F) -> np.ndarray:
    return np.atleast_2d(F)[:, LONGITUDINAL_FEATURES]


def role_override(track, probs: ManeuverProbabilities, layout: Optional[RoadLayout] = None) -> ManeuverProbabilities:
    """Replace learned probabilities with the maneuver an equipped vehicle announces.

    Only the merging role implies a maneuver: a lane change toward the main
    road, i.e. to the left for a right-hand ramp.
    """
    if not getattr(track, "equipped", False) or Role(getattr(track, "role", 0)) != Role.MERGING:
        return probs
    right_ramp = True if layout is None else layout.ramp_is_right
    p = np.zeros(3)
    p[LCL if right_ramp else LCR] = 1.0
    return ManeuverProbabilities.from_array(p)


@dataclass(frozen=True)
class RbbPrediction:
    lateral: Mixture1D  # absolute y
    longitudinal: Mixture1D  # absolute x
    point: np.ndarray  # (n, 2)
    probabilities: np.ndarray  # (n, 3)


def rbb_predict_arrays(model: PredictionModel, F, x, y, offsets, horizons, probs=None) -> RbbPrediction:
    """Vectorized prediction for ``n`` targets given their feature rows."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = len(F)
    h = np.broadcast_to(np.asarray(horizons, dtype=float), (n,))
    if np.any(h <= 0) or np.any(h > MAX_HORIZON + 1e-9):
        raise ValueError(f"horizon must lie in (0, {MAX_HORIZON}] s")
    P = model.mlp.posterior(F) if probs is None else np.atleast_2d(np.asarray(probs, dtype=float))
    lat_in = lateral_inputs(offsets, F[:, 2])
    parts = [gmr_condition(g, lat_in, h) for g in model.lateral]
    lateral = Mixture1D.blend(parts, P).shifted(np.asarray(y, dtype=float))
    vx = F[:, F_VX]
    speed_dev = gmr_condition(model.longitudinal, longitudinal_inputs(F), h)
    longitudinal = Mixture1D(speed_dev.weights, speed_dev.means * h[:, None], speed_dev.variances * (h * h)[:, None])
    longitudinal = longitudinal.shifted(np.asarray(x, dtype=float) + vx * h)
    return RbbPrediction(lateral, longitudinal, np.column_stack([longitudinal.mean(), lateral.mean()]), P)


def predict_position_rbb(track, snapshot: Iterable, layout: RoadLayout, horizon: float,
                         models: Optional[PredictionModel]) -> RbbPrediction:
    if models is None:
        raise ModelMissing("role-based prediction needs a trained model")
    target = as_agent(track)
    others = [as_agent(o) for o in snapshot]
    F = extract_features(target, others, layout)
    lane = layout.lane_at(target.y)
    probs = role_override(target, ManeuverProbabilities.from_array(models.mlp.posterior(F)[0]), layout)
    return rbb_predict_arrays(models, F, target.x, target.y, target.y - layout.center(lane), horizon,
                              probs.as_array())


def predict_position_vlk(track, layout: RoadLayout, horizon: float) -> np.ndarray:
    """Constant longitudinal speed, constant offset to the current lane center."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    a = as_agent(track)
    return np.array([a.x + a.vx * horizon, a.y])


class VlkPredictor:
    name = "vlk"

    def predict_point(self, target, others: Sequence, layout: RoadLayout, horizon: float) -> np.ndarray:
        return predict_position_vlk(target, layout, horizon)


class RbbPredictor:
    name = "rbb"

    def __init__(self, model: PredictionModel):
        self.model = model

    def predict_point(self, target, others: Sequence, layout: RoadLayout, horizon: float) -> np.ndarray:
        if horizon <= 0:
            return predict_position_vlk(target, layout, 0.0)
        a = as_agent(target)
        if layout.lane_at(a.y) is None:
            return predict_position_vlk(a, layout, horizon)
        h = min(horizon, MAX_HORIZON)
        p = predict_position_rbb(a, others, layout, h, self.model).point[0]
        if horizon > h:  # beyond the trained range continue at constant speed
            p = p + np.array([a.vx * (horizon - h), 0.0])
        return p


__all__ = [
    "FLW", "LCL", "LCR", "MAX_HORIZON", "ModelMissing", "PredictionModel", "RbbPrediction", "RbbPredictor",
    "VlkPredictor", "lateral_inputs", "longitudinal_inputs", "predict_position_rbb", "predict_position_vlk",
    "rbb_predict_arrays", "role_override",
]
